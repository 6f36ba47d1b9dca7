// Triple-to-sentence patterns. This table mirrors the consumer's sentence
// renderer so exported node features are built from the same text the
// prompts use. Lookup keys are the relation name lowercased with
// underscores removed, so "is_a" and "IsA" both resolve.

const REL_PATTERNS: Record<string, string> = {
  isa: 'is a',
  partof: 'is part of',
  hasa: 'has',
  usedfor: 'is used for',
  capableof: 'is capable of',
  atlocation: 'is located at',
  causes: 'causes',
  causesdesire: 'makes someone want',
  createdby: 'is created by',
  definedas: 'is defined as',
  desires: 'desires',
  notdesires: 'does not desire',
  hascontext: 'appears in the context of',
  hasfirstsubevent: 'begins with',
  haslastsubevent: 'ends with',
  hasprerequisite: 'requires',
  hasproperty: 'has the property',
  hassubevent: 'involves',
  instanceof: 'is an instance of',
  locatednear: 'is located near',
  madeof: 'is made of',
  motivatedbygoal: 'is motivated by',
  notcapableof: 'is not capable of',
  receivesaction: 'can receive the action',
  relatedto: 'is related to',
  similarto: 'is similar to',
  symbolof: 'is a symbol of',
  synonym: 'is a synonym of',
  antonym: 'is the opposite of',
  distinctfrom: 'is distinct from',
  entails: 'entails',
  mannerof: 'is a manner of',
  formof: 'is a form of',
  derivedfrom: 'is derived from',
  etymologicallyrelatedto: 'shares word origins with',
};

const spaced = (name: string): string => name.replace(/_/g, ' ');

export function relationPattern(relName: string): string | undefined {
  return REL_PATTERNS[relName.toLowerCase().replace(/_/g, '')];
}

export function verbalizeTriple(head: string, rel: string, tail: string): string {
  const pattern = relationPattern(rel);
  if (pattern === undefined) {
    return `${spaced(head)} is related to ${spaced(tail)} via ${spaced(rel)}.`;
  }
  return `${spaced(head)} ${pattern} ${spaced(tail)}.`;
}

// text used to embed a relation itself
export function relationText(relName: string): string {
  return relationPattern(relName) ?? spaced(relName);
}

// Tab-separated triple file parser, matching the consumer's loader rules:
// UTF-8, one head<TAB>relation<TAB>tail per line, '#' comments and blank
// lines skipped, names normalized to lowercase with spaces as underscores,
// exact duplicate triples dropped, ids in first-appearance order.

import { promises as fs } from 'node:fs';

export interface Graph {
  entityNames: string[];
  relationNames: string[];
  triples: Array<[number, number, number]>;
}

export function normalizeName(name: string): string {
  return name.trim().toLowerCase().replace(/ /g, '_');
}

export async function loadGraphTsv(path: string): Promise<Graph> {
  const text = await fs.readFile(path, 'utf-8');
  const entityIndex = new Map<string, number>();
  const relationIndex = new Map<string, number>();
  const entityNames: string[] = [];
  const relationNames: string[] = [];
  const triples: Array<[number, number, number]> = [];
  const seen = new Set<string>();

  const entity = (name: string): number => {
    const key = normalizeName(name);
    let id = entityIndex.get(key);
    if (id === undefined) {
      id = entityNames.length;
      entityIndex.set(key, id);
      entityNames.push(key);
    }
    return id;
  };
  const relation = (name: string): number => {
    const key = normalizeName(name);
    let id = relationIndex.get(key);
    if (id === undefined) {
      id = relationNames.length;
      relationIndex.set(key, id);
      relationNames.push(key);
    }
    return id;
  };

  const lines = text.split('\n');
  lines.forEach((line, i) => {
    const stripped = line.replace(/\r$/, '');
    if (!stripped.trim() || stripped.trimStart().startsWith('#')) return;
    const fields = stripped.split('\t');
    if (fields.length !== 3 || fields.some((f) => !f.trim())) {
      throw new Error(`${path}:${i + 1}: expected 3 tab-separated fields`);
    }
    const t: [number, number, number] = [entity(fields[0]), relation(fields[1]), entity(fields[2])];
    const key = t.join(',');
    if (!seen.has(key)) {
      seen.add(key);
      triples.push(t);
    }
  });

  if (triples.length === 0) {
    throw new Error(`${path}: no triples found`);
  }
  return { entityNames, relationNames, triples };
}

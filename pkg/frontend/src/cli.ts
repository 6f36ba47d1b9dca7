#!/usr/bin/env node
// kgeb-export: write KGEB vector files for the KG-prompting engine.
//
//   kgeb-export entities --graph g.tsv --out-vectors ent.kgeb
//   kgeb-export contexts --dataset d.jsonl --out-vectors ctx.kgeb
//
// Defaults: --model hash:64 (deterministic, offline), vocab path next to the
// vector file.

import { loadEncoder } from './encoder.js';
import { ExportJob, exportContextEmbeddings, exportEntityEmbeddings } from './export.js';

interface Flags {
  [key: string]: string;
}

function parseFlags(argv: string[]): Flags {
  const flags: Flags = {};
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    if (!key.startsWith('--') || i + 1 >= argv.length) {
      throw new Error(`expected --flag value pairs, got ${key}`);
    }
    flags[key.slice(2)] = argv[i + 1];
  }
  return flags;
}

function usage(): string {
  return [
    'usage: kgeb-export <entities|contexts> [flags]',
    '  entities: --graph <tsv>      encode graph entities and relations',
    '  contexts: --dataset <jsonl>  encode question contexts, one row per example',
    'shared flags:',
    '  --model <id>         hash:<dim> or a transformers.js model (default hash:64)',
    '  --out-vectors <path> KGEB output (default <input>.kgeb)',
    '  --out-vocab <path>   vocab output (default <out-vectors>.vocab)',
    '  --batch-size <n>     encoder batch size (default 32)',
    '  --seed <n>           hash-encoder seed (default 0)',
    '  --device <name>      device hint for transformer models',
  ].join('\n');
}

export async function main(argv: string[]): Promise<number> {
  const [command, ...rest] = argv;
  if (command !== 'entities' && command !== 'contexts') {
    console.error(usage());
    return 2;
  }
  let flags: Flags;
  try {
    flags = parseFlags(rest);
  } catch (exc) {
    console.error(String(exc));
    console.error(usage());
    return 2;
  }
  const input = command === 'entities' ? flags['graph'] : flags['dataset'];
  if (!input) {
    console.error(`missing --${command === 'entities' ? 'graph' : 'dataset'}`);
    return 2;
  }
  const outVectors = flags['out-vectors'] ?? `${input}.kgeb`;
  const job: ExportJob = {
    input,
    model: flags['model'] ?? 'hash:64',
    outVectors,
    outVocab: flags['out-vocab'] ?? `${outVectors}.vocab`,
    batchSize: parseInt(flags['batch-size'] ?? '32', 10),
    device: flags['device'],
  };
  try {
    const encoder = await loadEncoder(job.model, parseInt(flags['seed'] ?? '0', 10), job.device);
    const table =
      command === 'entities'
        ? await exportEntityEmbeddings(job, encoder)
        : await exportContextEmbeddings(job, encoder);
    console.log(
      `wrote ${table.vocab.length} rows of dim ${table.dim} to ${job.outVectors} ` +
        `(vocab: ${job.outVocab}, model: ${encoder.modelId})`,
    );
    return 0;
  } catch (exc) {
    console.error(`error: ${exc instanceof Error ? exc.message : exc}`);
    return 1;
  }
}

const invokedDirectly =
  process.argv[1] !== undefined && import.meta.url.endsWith(process.argv[1].split('/').pop()!);
if (invokedDirectly) {
  main(process.argv.slice(2)).then((code) => process.exit(code));
}

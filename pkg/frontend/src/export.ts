// Export jobs: graph entities/relations and dataset question contexts.

import { promises as fs } from 'node:fs';

import { Encoder } from './encoder.js';
import { Graph, loadGraphTsv } from './graph.js';
import { VectorTable, writeTable } from './kgeb.js';
import { relationText, verbalizeTriple } from './verbalize.js';

export interface ExportJob {
  input: string; // graph TSV or dataset JSONL
  model: string;
  outVectors: string;
  outVocab: string;
  batchSize: number;
  device?: string;
}

async function encodeBatched(
  encoder: Encoder,
  texts: string[],
  batchSize: number,
): Promise<Float32Array[]> {
  const out: Float32Array[] = [];
  for (let i = 0; i < texts.length; i += batchSize) {
    const rows = await encoder.encode(texts.slice(i, i + batchSize));
    out.push(...rows);
  }
  return out;
}

function meanRows(rows: Float32Array[], dim: number): Float32Array {
  const acc = new Float64Array(dim);
  for (const row of rows) {
    for (let i = 0; i < dim; i++) acc[i] += row[i];
  }
  const out = new Float32Array(dim);
  for (let i = 0; i < dim; i++) out[i] = acc[i] / rows.length;
  return out;
}

// One vector per entity (mean over its incident-triple sentences) followed by
// one per relation (its pattern text). Vocab order: entities in graph id
// order, then relations.
export async function exportEntityEmbeddings(job: ExportJob, encoder: Encoder): Promise<VectorTable> {
  const g: Graph = await loadGraphTsv(job.input);
  const sentencesOf: string[][] = g.entityNames.map(() => []);
  for (const [h, r, t] of g.triples) {
    const sentence = verbalizeTriple(g.entityNames[h], g.relationNames[r], g.entityNames[t]);
    sentencesOf[h].push(sentence);
    sentencesOf[t].push(sentence);
  }

  const flat: string[] = [];
  const spans: Array<[number, number]> = [];
  for (const sentences of sentencesOf) {
    spans.push([flat.length, sentences.length]);
    flat.push(...sentences);
  }
  const relTexts = g.relationNames.map(relationText);
  const encoded = await encodeBatched(encoder, [...flat, ...relTexts], job.batchSize);

  const rows: Float32Array[] = [];
  for (const [start, count] of spans) {
    rows.push(meanRows(encoded.slice(start, start + count), encoder.dim));
  }
  rows.push(...encoded.slice(flat.length));

  const table: VectorTable = {
    dim: encoder.dim,
    vocab: [...g.entityNames, ...g.relationNames],
    rows,
  };
  await writeTable(table, job.outVectors, job.outVocab);
  return table;
}

interface DatasetRecord {
  id: string;
  question: string;
  choices: Array<{ label: string; text: string }>;
}

// One vector per example: the question text concatenated with its choice
// texts. Vocab lines are example ids.
export async function exportContextEmbeddings(job: ExportJob, encoder: Encoder): Promise<VectorTable> {
  const text = await fs.readFile(job.input, 'utf-8');
  const ids: string[] = [];
  const texts: string[] = [];
  text.split('\n').forEach((line, i) => {
    if (!line.trim()) return;
    let rec: DatasetRecord;
    try {
      rec = JSON.parse(line);
    } catch (exc) {
      throw new Error(`${job.input}:${i + 1}: invalid JSON (${exc})`);
    }
    if (typeof rec.id !== 'string' || !rec.id) {
      throw new Error(`${job.input}:${i + 1}: missing example id`);
    }
    if (typeof rec.question !== 'string' || !rec.question.trim()) {
      throw new Error(`example ${rec.id}: empty question text`);
    }
    const choiceText = (rec.choices ?? []).map((c) => c.text).join(' ');
    ids.push(rec.id);
    texts.push(choiceText ? `${rec.question} ${choiceText}` : rec.question);
  });

  const rows = await encodeBatched(encoder, texts, job.batchSize);
  const table: VectorTable = { dim: encoder.dim, vocab: ids, rows };
  await writeTable(table, job.outVectors, job.outVocab);
  return table;
}

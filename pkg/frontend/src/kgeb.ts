// KGEB binary vector file writer/reader.
// Layout (little-endian throughout): magic "KGEB", u32 version=1, u32 dim,
// u64 count, then count*dim float32 values row-major. The companion vocab
// file holds one name per line (LF), line i naming row i.

import { promises as fs } from 'node:fs';
import { dirname, join } from 'node:path';

export const KGEB_MAGIC = 'KGEB';
export const KGEB_VERSION = 1;
const HEADER_BYTES = 4 + 4 + 4 + 8;

export interface VectorTable {
  dim: number;
  vocab: string[];
  rows: Float32Array[]; // rows.length === vocab.length, each of length dim
}

export function encodeKgeb(table: VectorTable): Buffer {
  const { dim, rows } = table;
  if (rows.length !== table.vocab.length) {
    throw new Error(`row count ${rows.length} != vocab length ${table.vocab.length}`);
  }
  const buf = Buffer.alloc(HEADER_BYTES + 4 * dim * rows.length);
  buf.write(KGEB_MAGIC, 0, 'ascii');
  buf.writeUInt32LE(KGEB_VERSION, 4);
  buf.writeUInt32LE(dim, 8);
  buf.writeBigUInt64LE(BigInt(rows.length), 12);
  let off = HEADER_BYTES;
  for (const row of rows) {
    if (row.length !== dim) {
      throw new Error(`row has ${row.length} values, expected ${dim}`);
    }
    for (const v of row) {
      if (!Number.isFinite(v)) throw new Error('non-finite value in row');
      buf.writeFloatLE(v, off);
      off += 4;
    }
  }
  return buf;
}

export function decodeKgeb(data: Buffer): { dim: number; rows: Float32Array[] } {
  if (data.length < HEADER_BYTES) throw new Error('truncated header');
  if (data.toString('ascii', 0, 4) !== KGEB_MAGIC) throw new Error('bad magic');
  const version = data.readUInt32LE(4);
  if (version !== KGEB_VERSION) throw new Error(`unsupported version ${version}`);
  const dim = data.readUInt32LE(8);
  const count = Number(data.readBigUInt64LE(12));
  if (data.length !== HEADER_BYTES + 4 * dim * count) {
    throw new Error(`expected ${HEADER_BYTES + 4 * dim * count} bytes, got ${data.length}`);
  }
  const rows: Float32Array[] = [];
  let off = HEADER_BYTES;
  for (let i = 0; i < count; i++) {
    const row = new Float32Array(dim);
    for (let j = 0; j < dim; j++) {
      row[j] = data.readFloatLE(off);
      off += 4;
    }
    rows.push(row);
  }
  return { dim, rows };
}

async function writeAtomic(path: string, data: Buffer | string): Promise<void> {
  const tmp = join(dirname(path), `.${Math.random().toString(36).slice(2)}.tmp`);
  await fs.writeFile(tmp, data);
  await fs.rename(tmp, path);
}

export async function writeTable(
  table: VectorTable,
  vectorsPath: string,
  vocabPath: string,
): Promise<void> {
  await writeAtomic(vectorsPath, encodeKgeb(table));
  await writeAtomic(vocabPath, table.vocab.join('\n') + '\n');
}

export function cosine(a: Float32Array, b: Float32Array): number {
  let dot = 0;
  let na = 0;
  let nb = 0;
  for (let i = 0; i < a.length; i++) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na === 0 || nb === 0) return 0;
  return dot / (Math.sqrt(na) * Math.sqrt(nb));
}

// Text encoders behind one interface. The hash encoder is deterministic and
// dependency-free (the offline/test path); any other model id is loaded as a
// transformers.js feature-extraction pipeline with mean pooling, when that
// package is installed.

import { createHash } from 'node:crypto';

export interface Encoder {
  readonly dim: number;
  readonly modelId: string;
  encode(texts: string[]): Promise<Float32Array[]>;
}

// Deterministic pseudo-encoder: sha256 in counter mode feeds a Box-Muller
// gaussian draw; output depends only on (seed, text, dim).
export class HashEncoder implements Encoder {
  readonly dim: number;
  readonly modelId: string;
  private readonly seed: number;

  constructor(dim = 64, seed = 0) {
    if (dim < 1) throw new Error('dim must be >= 1');
    this.dim = dim;
    this.seed = seed;
    this.modelId = `hash:${dim}`;
  }

  private uniforms(text: string, count: number): number[] {
    const out: number[] = [];
    let counter = 0;
    while (out.length < count) {
      const digest = createHash('sha256')
        .update(`${this.seed}\x1f${text}\x1f${counter}`)
        .digest();
      for (let i = 0; i + 4 <= digest.length && out.length < count; i += 4) {
        // map u32 to (0, 1]; never exactly 0 so log() is safe
        out.push((digest.readUInt32LE(i) + 1) / 4294967296);
      }
      counter += 1;
    }
    return out;
  }

  encodeOne(text: string): Float32Array {
    const pairs = Math.ceil(this.dim / 2);
    const u = this.uniforms(text, 2 * pairs);
    const vec = new Float32Array(this.dim);
    for (let i = 0; i < pairs; i++) {
      const r = Math.sqrt(-2 * Math.log(u[2 * i]));
      const theta = 2 * Math.PI * u[2 * i + 1];
      const a = r * Math.cos(theta);
      const b = r * Math.sin(theta);
      vec[2 * i] = a;
      if (2 * i + 1 < this.dim) vec[2 * i + 1] = b;
    }
    let norm = 0;
    for (const v of vec) norm += v * v;
    norm = Math.sqrt(norm);
    if (norm === 0) {
      vec[0] = 1;
      norm = 1;
    }
    for (let i = 0; i < vec.length; i++) vec[i] = vec[i] / norm;
    return vec;
  }

  async encode(texts: string[]): Promise<Float32Array[]> {
    return texts.map((t) => this.encodeOne(t));
  }
}

class TransformersEncoder implements Encoder {
  readonly dim: number;
  readonly modelId: string;
  private readonly pipe: any;

  private constructor(modelId: string, pipe: any, dim: number) {
    this.modelId = modelId;
    this.pipe = pipe;
    this.dim = dim;
  }

  static async load(modelId: string, device?: string): Promise<TransformersEncoder> {
    let pipeline;
    try {
      // @ts-ignore -- optional dependency, resolved at runtime when installed
      ({ pipeline } = await import('@xenova/transformers'));
    } catch {
      throw new Error(
        `model "${modelId}" needs the optional @xenova/transformers package; ` +
          'install it or use a hash:<dim> model id',
      );
    }
    const pipe = await pipeline('feature-extraction', modelId, device ? { device } : {});
    const probe = await pipe('probe', { pooling: 'mean', normalize: true });
    return new TransformersEncoder(modelId, pipe, probe.data.length);
  }

  async encode(texts: string[]): Promise<Float32Array[]> {
    const out: Float32Array[] = [];
    for (const text of texts) {
      const tensor = await this.pipe(text, { pooling: 'mean', normalize: true });
      out.push(Float32Array.from(tensor.data));
    }
    return out;
  }
}

export async function loadEncoder(
  modelId: string,
  seed = 0,
  device?: string,
): Promise<Encoder> {
  const hashMatch = /^hash:(\d+)$/.exec(modelId);
  if (hashMatch) {
    return new HashEncoder(parseInt(hashMatch[1], 10), seed);
  }
  return TransformersEncoder.load(modelId, device);
}

import { readFileSync } from 'node:fs';

import { FormatError } from './errors.js';

export type Shape4 = [number, number, number, number];

export interface TensorFile {
  shape: Shape4;
  /** Row-major float32 payload; always a fresh copy. */
  data: Float32Array;
}

const HEADER_BYTES = 16;

/**
 * Read a tensor dump: four little-endian u32 dimensions followed by the
 * row-major float32 payload.
 */
export function readTensorFile(path: string): TensorFile {
  const buf = readFileSync(path);
  if (buf.length < HEADER_BYTES) {
    throw new FormatError(`tensor dump ${path} too small for its header`);
  }
  const shape: Shape4 = [
    buf.readUInt32LE(0),
    buf.readUInt32LE(4),
    buf.readUInt32LE(8),
    buf.readUInt32LE(12),
  ];
  const count = shape[0] * shape[1] * shape[2] * shape[3];
  if (buf.length !== HEADER_BYTES + 4 * count) {
    throw new FormatError(`tensor dump ${path} body does not match its header`);
  }
  // Copy into an aligned buffer; Node file buffers are pooled and may
  // not sit on a 4-byte boundary.
  const aligned = new Uint8Array(4 * count);
  aligned.set(buf.subarray(HEADER_BYTES));
  return { shape, data: new Float32Array(aligned.buffer) };
}

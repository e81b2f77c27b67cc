import { closeSync, existsSync, mkdtempSync, openSync, readSync, readFileSync, rmSync, statSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';

import { FormatError, InputError } from './errors.js';
import { readTensorFile, type Shape4 } from './dump.js';
import { parseKeyValues, runPrimary } from './primary.js';

const MAGIC = 'STOK';
const VERSION = 1;
const HEADER_BYTES = 24;
const HUFFMAN_LENGTHS_BYTES = 256;

export const FLAG_HUFFMAN = 0x01;
export const FLAG_LABELS = 0x02;
export const FLAG_PERM = 0x04;

export interface ArchiveInfo {
  version: number;
  storageBits: number;
  flags: number;
  vocab: number;
  dim: number;
  gridSide: number;
  nRecords: number;
  hasHuffman: boolean;
  hasLabels: boolean;
  hasPermutation: boolean;
}

export interface Record {
  /** Token grid in original index space, row-major, gridSide^2 long. */
  grid: Uint16Array;
  label: number | null;
}

export interface BatchConfig {
  seed?: number;
  epoch?: number;
  /** First batch index to yield; defaults to 0. */
  startBatch?: number;
  batchSize?: number;
  mode?: 'train' | 'eval';
  /** Output spatial side of the augmented tensors. */
  m?: number;
  workers?: number;
}

export interface Batch {
  epoch: number;
  index: number;
  tensors: Float32Array;
  shape: Shape4;
  labels: Float32Array | null;
  /** [batch, classes] when labels are present. */
  labelShape: [number, number] | null;
}

const RAW_HEADER_BYTES = 16; // u64 N | u32 n | u32 V

/**
 * Read-only handle on a stok archive.
 *
 * The header and label sections are plain fixed-layout regions and are
 * parsed here; everything that needs the codec (record payloads, the
 * augmentation pipeline) is delegated to the primary CLI, so the two
 * implementations can never drift apart.
 */
export class BoundArchive {
  readonly path: string;
  readonly info: ArchiveInfo;
  private readonly labels: Uint16Array | null;
  private rawTokens: Buffer | null = null;
  private workDir: string | null = null;

  private constructor(path: string, info: ArchiveInfo, labels: Uint16Array | null) {
    this.path = path;
    this.info = info;
    this.labels = labels;
  }

  static open(path: string): BoundArchive {
    if (!existsSync(path)) {
      throw new FormatError(`no such archive: ${path}`);
    }
    const fileSize = statSync(path).size;
    const fd = openSync(path, 'r');
    try {
      const head = Buffer.alloc(HEADER_BYTES);
      if (readSync(fd, head, 0, HEADER_BYTES, 0) !== HEADER_BYTES) {
        throw new FormatError('file too small to hold an archive header');
      }
      if (head.toString('latin1', 0, 4) !== MAGIC) {
        throw new FormatError(`bad magic ${JSON.stringify(head.toString('latin1', 0, 4))}`);
      }
      const version = head.readUInt16LE(4);
      if (version !== VERSION) {
        throw new FormatError(`unsupported archive version ${version}`);
      }
      const storageBits = head.readUInt8(6);
      const flags = head.readUInt8(7);
      const vocab = head.readUInt16LE(8);
      const dim = head.readUInt16LE(10);
      const gridSide = head.readUInt16LE(12);
      const nRecords = Number(head.readBigUInt64LE(16));
      const info: ArchiveInfo = {
        version,
        storageBits,
        flags,
        vocab,
        dim,
        gridSide,
        nRecords,
        hasHuffman: (flags & FLAG_HUFFMAN) !== 0,
        hasLabels: (flags & FLAG_LABELS) !== 0,
        hasPermutation: (flags & FLAG_PERM) !== 0,
      };

      let offset = HEADER_BYTES + 4 * dim * vocab;
      if (info.hasPermutation) {
        offset += 2 * vocab;
      }
      offset += HUFFMAN_LENGTHS_BYTES;

      let labels: Uint16Array | null = null;
      if (info.hasLabels) {
        const raw = Buffer.alloc(2 * nRecords);
        if (offset + raw.length > fileSize || readSync(fd, raw, 0, raw.length, offset) !== raw.length) {
          throw new FormatError('file truncated inside labels section');
        }
        labels = new Uint16Array(nRecords);
        for (let i = 0; i < nRecords; i++) {
          labels[i] = raw.readUInt16LE(2 * i);
        }
        offset += raw.length;
      }
      // offsets section (N+1 u64) plus payload must still fit
      if (offset + 8 * (nRecords + 1) > fileSize) {
        throw new FormatError('file truncated inside offset index');
      }
      return new BoundArchive(path, info, labels);
    } finally {
      closeSync(fd);
    }
  }

  get nRecords(): number {
    return this.info.nRecords;
  }

  /** Decode record i into original-index tokens plus its label. */
  get(i: number): Record {
    if (!Number.isInteger(i) || i < 0 || i >= this.info.nRecords) {
      throw new InputError(`record ${i} out of range [0, ${this.info.nRecords})`);
    }
    const raw = this.ensureUnpacked();
    const cells = this.info.gridSide * this.info.gridSide;
    const start = RAW_HEADER_BYTES + 2 * cells * i;
    const grid = new Uint16Array(cells);
    for (let k = 0; k < cells; k++) {
      grid[k] = raw.readUInt16LE(start + 2 * k);
    }
    return { grid, label: this.labels ? this.labels[i] : null };
  }

  /**
   * Iterate pipeline batches for one epoch. Each batch is produced by
   * the primary's dump-batch command, so the bytes are identical to its
   * golden tensor dumps for the same (seed, epoch, index).
   */
  *batches(config: BatchConfig = {}): Generator<Batch, void, undefined> {
    const seed = config.seed ?? 0;
    const epoch = config.epoch ?? 0;
    const batchSize = config.batchSize ?? 64;
    const mode = config.mode ?? 'train';
    let index = config.startBatch ?? 0;
    let perEpoch = Infinity;

    while (index < perEpoch) {
      const outDir = join(this.ensureWorkDir(), `batches-${seed}-${epoch}-${index}`);
      const args = [
        'dump-batch',
        '--archive', this.path,
        '--out-dir', outDir,
        '--seed', String(seed),
        '--epoch', String(epoch),
        '--batch', String(index),
        '--count', '1',
        '--batch-size', String(batchSize),
        '--mode', mode,
      ];
      if (config.m !== undefined) {
        args.push('--m', String(config.m));
      }
      if (config.workers !== undefined) {
        args.push('--workers', String(config.workers));
      }
      const kv = parseKeyValues(runPrimary(args));
      perEpoch = Number(kv.get('batches_per_epoch') ?? 0);
      if (Number(kv.get('n_files') ?? 0) === 0) {
        break; // seeked past the end of the epoch
      }
      const tensor = readTensorFile(join(outDir, `batch_${epoch}_${index}.f32`));
      let labels: Float32Array | null = null;
      let labelShape: [number, number] | null = null;
      if (this.info.hasLabels) {
        const labelFile = readTensorFile(join(outDir, `labels_${epoch}_${index}.f32`));
        labels = labelFile.data;
        labelShape = [labelFile.shape[0], labelFile.shape[1]];
      }
      rmSync(outDir, { recursive: true, force: true });
      yield { epoch, index, tensors: tensor.data, shape: tensor.shape, labels, labelShape };
      index += 1;
    }
  }

  /** Drop cached decode output and temporary files. */
  close(): void {
    this.rawTokens = null;
    if (this.workDir) {
      rmSync(this.workDir, { recursive: true, force: true });
      this.workDir = null;
    }
  }

  private ensureWorkDir(): string {
    if (!this.workDir) {
      this.workDir = mkdtempSync(join(tmpdir(), 'stok-bindings-'));
    }
    return this.workDir;
  }

  private ensureUnpacked(): Buffer {
    if (this.rawTokens) {
      return this.rawTokens;
    }
    const rawPath = join(this.ensureWorkDir(), 'records.raw');
    runPrimary(['unpack', '--archive', this.path, '--out', rawPath]);
    const raw = readFileSync(rawPath);
    const cells = this.info.gridSide * this.info.gridSide;
    if (raw.length !== RAW_HEADER_BYTES + 2 * cells * this.info.nRecords) {
      throw new FormatError('unpacked token file does not match the archive header');
    }
    this.rawTokens = raw;
    return raw;
  }
}

export {
  BoundArchive,
  FLAG_HUFFMAN,
  FLAG_LABELS,
  FLAG_PERM,
  type ArchiveInfo,
  type Batch,
  type BatchConfig,
  type Record,
} from './archive.js';
export { readTensorFile, type Shape4, type TensorFile } from './dump.js';
export {
  ConfigError,
  CorruptionError,
  FormatError,
  InputError,
  IoError,
  StokError,
  TruncationError,
  errorFromExitCode,
  type ErrorCategory,
} from './errors.js';
export { parseKeyValues, runPrimary } from './primary.js';

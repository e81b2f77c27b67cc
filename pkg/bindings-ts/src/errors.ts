export type ErrorCategory =
  | 'input'
  | 'format'
  | 'truncation'
  | 'corruption'
  | 'config'
  | 'io'
  | 'error';

export class StokError extends Error {
  readonly category: ErrorCategory;

  constructor(message: string, category: ErrorCategory = 'error') {
    super(message);
    this.name = new.target.name;
    this.category = category;
  }
}

export class InputError extends StokError {
  constructor(message: string) {
    super(message, 'input');
  }
}

export class FormatError extends StokError {
  constructor(message: string) {
    super(message, 'format');
  }
}

export class TruncationError extends StokError {
  constructor(message: string) {
    super(message, 'truncation');
  }
}

export class CorruptionError extends StokError {
  constructor(message: string) {
    super(message, 'corruption');
  }
}

export class ConfigError extends StokError {
  constructor(message: string) {
    super(message, 'config');
  }
}

export class IoError extends StokError {
  constructor(message: string) {
    super(message, 'io');
  }
}

// Exit codes published by the stok CLI, one per error family.
const BY_EXIT_CODE: Record<number, new (message: string) => StokError> = {
  2: InputError,
  3: FormatError,
  4: TruncationError,
  5: CorruptionError,
  6: ConfigError,
  7: IoError,
};

export function errorFromExitCode(code: number, message: string): StokError {
  const ctor = BY_EXIT_CODE[code];
  return ctor ? new ctor(message) : new StokError(message);
}

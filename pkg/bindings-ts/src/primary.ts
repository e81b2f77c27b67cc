import { execFileSync } from 'node:child_process';

import { errorFromExitCode, IoError } from './errors.js';

/**
 * Invoke the primary stok CLI as `python3 -m stok <args>` and return its
 * stdout. Override the interpreter with the STOK_PYTHON env var.
 *
 * All codec work happens on the other side of this call; the bindings
 * only parse interchange files the CLI produces.
 */
export function runPrimary(args: string[]): string {
  const python = process.env.STOK_PYTHON ?? 'python3';
  try {
    return execFileSync(python, ['-m', 'stok', ...args], {
      encoding: 'utf8',
      maxBuffer: 64 * 1024 * 1024,
    });
  } catch (err) {
    const failure = err as NodeJS.ErrnoException & { status?: number | null; stderr?: string };
    if (typeof failure.status === 'number' && failure.status !== 0) {
      const detail = (failure.stderr ?? '').trim() || `stok exited with code ${failure.status}`;
      throw errorFromExitCode(failure.status, detail);
    }
    throw new IoError(`failed to launch ${python}: ${failure.message}`);
  }
}

/** Parse the CLI's line-delimited key=value output. */
export function parseKeyValues(stdout: string): Map<string, string> {
  const out = new Map<string, string>();
  for (const line of stdout.split('\n')) {
    const eq = line.indexOf('=');
    if (eq > 0) {
      out.set(line.slice(0, eq), line.slice(eq + 1).trim());
    }
  }
  return out;
}

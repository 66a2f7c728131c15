import { execFile } from "node:child_process";

export interface RunnerOptions {
  /** Python interpreter used to invoke the core; GEOVOX_PYTHON overrides. */
  python?: string;
  /** Extra milliseconds before the core invocation is aborted. */
  timeoutMs?: number;
}

export class GeovoxError extends Error {
  constructor(
    message: string,
    public readonly exitCode: number | null,
  ) {
    super(message);
    this.name = "GeovoxError";
  }
}

export function pythonExecutable(options?: RunnerOptions): string {
  return options?.python ?? process.env.GEOVOX_PYTHON ?? "python3";
}

/** Run one geovox CLI command, surfacing the core's message on failure. */
export function runGeovox(
  args: string[],
  options?: RunnerOptions,
): Promise<{ stdout: string; stderr: string }> {
  const python = pythonExecutable(options);
  return new Promise((resolve, reject) => {
    execFile(
      python,
      ["-m", "geovox.cli", ...args],
      { timeout: options?.timeoutMs ?? 600_000, maxBuffer: 64 * 1024 * 1024 },
      (error, stdout, stderr) => {
        if (error) {
          const code = typeof error.code === "number" ? error.code : null;
          const detail = stderr.trim() || error.message;
          reject(new GeovoxError(detail, code));
          return;
        }
        resolve({ stdout, stderr });
      },
    );
  });
}

import { spawnSync } from "child_process";
import * as fs from "fs";
import * as os from "os";
import * as path from "path";

export interface SpawnResult {
  status: number | null;
  stdout: string;
  stderr: string;
}

const DIST = path.join(__dirname, "..", "dist");

export function runEvaluator(
  script: "toy.js" | "downstream.js",
  args: string[],
  request: object = { lambda: 0.5, target_language: "", mode: "la" },
): SpawnResult {
  const proc = spawnSync(
    process.execPath,
    [path.join(DIST, script), ...args],
    { input: JSON.stringify(request), encoding: "utf8" },
  );
  return { status: proc.status, stdout: proc.stdout, stderr: proc.stderr };
}

/** The core engine's CLI; the bridge talks to it purely via argv/files. */
export function runLangarith(args: string[]): SpawnResult {
  const proc = spawnSync("langarith", args, { encoding: "utf8" });
  if (proc.error) {
    throw new Error(
      `langarith CLI unavailable (${proc.error}); install the core package first`,
    );
  }
  return { status: proc.status, stdout: proc.stdout, stderr: proc.stderr };
}

export function makeTmpDir(prefix: string): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), prefix));
}

/** Parse stdout that must contain exactly one JSON object, per protocol. */
export function parseSingleJsonObject(stdout: string): Record<string, unknown> {
  const trimmed = stdout.trim();
  expectSingleLine(trimmed);
  return JSON.parse(trimmed) as Record<string, unknown>;
}

function expectSingleLine(text: string): void {
  if (text.includes("\n")) {
    throw new Error(`expected a single JSON object on stdout, got:\n${text}`);
  }
}

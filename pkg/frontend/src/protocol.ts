/**
 * Sweep evaluator subprocess protocol.
 *
 * The orchestrator invokes the evaluator once per grid point with the
 * merged checkpoint path substituted into the command, writes a JSON
 * request to stdin, and expects exactly one JSON object
 * {"score": <float>} on stdout with exit code 0. Higher scores are better.
 */

export interface EvalRequest {
  lambda: number;
  target_language: string;
  mode: string;
}

export interface EvalResult {
  score: number;
  detail?: Record<string, unknown>;
}

export async function readRequest(): Promise<EvalRequest> {
  const chunks: Buffer[] = [];
  for await (const chunk of process.stdin) {
    chunks.push(chunk as Buffer);
  }
  const raw = Buffer.concat(chunks).toString("utf8").trim();
  if (!raw) return { lambda: NaN, target_language: "", mode: "" };
  const parsed = JSON.parse(raw);
  return {
    lambda: Number(parsed.lambda),
    target_language: String(parsed.target_language ?? ""),
    mode: String(parsed.mode ?? ""),
  };
}

export function emitResult(result: EvalResult): void {
  if (!Number.isFinite(result.score)) {
    throw new Error(`refusing to emit non-finite score ${result.score}`);
  }
  const payload: Record<string, unknown> = { score: result.score };
  if (result.detail) payload.detail = result.detail;
  process.stdout.write(JSON.stringify(payload) + "\n");
}

export function fail(message: string): never {
  console.error(`error: ${message}`);
  process.exit(1);
}

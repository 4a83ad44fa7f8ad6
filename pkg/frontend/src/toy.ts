/**
 * Deterministic toy evaluator for CI sweeps.
 *
 * Scores a merged checkpoint as the negative sum of squared differences
 * to a fixed target checkpoint (FP64 accumulation): identical checkpoints
 * score 0, everything else negative. Symmetric in its two inputs.
 *
 * Usage: node dist/toy.js --target <target.safetensors> <checkpoint>
 */

import { loadCheckpoint } from "./safetensors";
import { emitResult, fail, readRequest } from "./protocol";

export function toyScore(mergedPath: string, targetPath: string): number {
  const target = loadCheckpoint(targetPath);
  const merged = loadCheckpoint(mergedPath);
  let score = 0;
  for (const [name, want] of target.tensors) {
    const got = merged.tensors.get(name);
    if (!got) throw new Error(`merged checkpoint is missing tensor ${name}`);
    if (got.data.length !== want.data.length) {
      throw new Error(`tensor ${name}: element count mismatch`);
    }
    for (let i = 0; i < want.data.length; i++) {
      const d = got.data[i] - want.data[i];
      score -= d * d;
    }
  }
  for (const name of merged.tensors.keys()) {
    if (!target.tensors.has(name)) {
      throw new Error(`target checkpoint is missing tensor ${name}`);
    }
  }
  return score;
}

async function main(): Promise<void> {
  const args = process.argv.slice(2);
  let target: string | undefined;
  let checkpoint: string | undefined;
  for (let i = 0; i < args.length; i++) {
    if (args[i] === "--target") target = args[++i];
    else if (!checkpoint) checkpoint = args[i];
    else fail(`unexpected argument ${args[i]}`);
  }
  if (!target || !checkpoint) {
    fail("usage: toy.js --target <target.safetensors> <checkpoint>");
  }
  await readRequest(); // protocol: consume the request even though the score ignores it
  emitResult({ score: toyScore(checkpoint!, target!) });
}

if (require.main === module) {
  main().catch((err) => fail(err instanceof Error ? err.message : String(err)));
}

/**
 * Downstream task evaluator: loads the frozen fixture backbone plus a
 * merged language-adapter checkpoint, routes language adapter -> task
 * adapter, and scores the target-language validation split.
 *
 * Metrics: entity-span F1 (ner), accuracy (nli), token-bag F1 (qa).
 * The QA set is split 50/50 into valid/test with a seeded shuffle; the
 * original split seed is unknown, so it is exposed as --split-seed and
 * exact historical numbers are not recoverable.
 *
 * Usage:
 *   node dist/downstream.js --model-dir <dir> --task ner|nli|qa \
 *       [--split-seed N] <checkpoint>
 */

import * as fs from "fs";
import * as path from "path";

import {
  Model,
  loadModel,
  predictNerTags,
  predictNliLabel,
  predictQaSpan,
  tokenize,
} from "./model";
import { accuracy, bioToSpans, mean, spanF1, tokenF1 } from "./metrics";
import { EvalResult, emitResult, fail, readRequest } from "./protocol";

export type Task = "ner" | "nli" | "qa";

interface NerExample {
  tokens: string[];
  tags: string[];
}

interface NliExample {
  premise: string;
  hypothesis: string;
  label: string;
}

interface QaExample {
  context: string;
  answer: string;
}

function readJsonl<T>(file: string): T[] {
  return fs
    .readFileSync(file, "utf8")
    .split("\n")
    .filter((line) => line.trim().length > 0)
    .map((line) => JSON.parse(line) as T);
}

/** Prefer the per-language split when present. */
export function resolveValidationFile(
  modelDir: string, task: Task, targetLanguage: string,
): string {
  if (targetLanguage) {
    const perLanguage = path.join(modelDir, `valid.${task}.${targetLanguage}.jsonl`);
    if (fs.existsSync(perLanguage)) return perLanguage;
  }
  const generic = path.join(modelDir, `valid.${task}.jsonl`);
  if (!fs.existsSync(generic)) {
    throw new Error(`no validation data for task ${task} in ${modelDir}`);
  }
  return generic;
}

function mulberry32(seed: number): () => number {
  let state = seed | 0;
  return () => {
    state = (state + 0x6d2b79f5) | 0;
    let t = Math.imul(state ^ (state >>> 15), 1 | state);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** Seeded 50/50 shuffle-split; returns the validation half. */
export function validationHalf<T>(examples: T[], seed: number): T[] {
  const order = examples.map((_, i) => i);
  const rand = mulberry32(seed);
  for (let i = order.length - 1; i > 0; i--) {
    const j = Math.floor(rand() * (i + 1));
    [order[i], order[j]] = [order[j], order[i]];
  }
  const keep = Math.ceil(order.length / 2);
  return order.slice(0, keep).sort((a, b) => a - b).map((i) => examples[i]);
}

export function evaluateTask(
  model: Model, task: Task, validationFile: string, splitSeed: number,
): EvalResult {
  if (task === "ner") {
    const examples = readJsonl<NerExample>(validationFile);
    const pred = examples.map((ex) => bioToSpans(predictNerTags(model, ex.tokens)));
    const gold = examples.map((ex) => bioToSpans(ex.tags));
    return {
      score: spanF1(pred, gold),
      detail: { metric: "span_f1", examples: examples.length },
    };
  }
  if (task === "nli") {
    const examples = readJsonl<NliExample>(validationFile);
    const pred = examples.map((ex) => predictNliLabel(model, ex.premise, ex.hypothesis));
    return {
      score: accuracy(pred, examples.map((ex) => ex.label)),
      detail: { metric: "accuracy", examples: examples.length },
    };
  }
  const all = readJsonl<QaExample>(validationFile);
  const examples = validationHalf(all, splitSeed);
  const scores = examples.map((ex) => {
    const predicted = predictQaSpan(model, tokenize(ex.context));
    return tokenF1(predicted, tokenize(ex.answer));
  });
  return {
    score: mean(scores),
    detail: { metric: "token_f1", examples: examples.length, split_seed: splitSeed },
  };
}

async function main(): Promise<void> {
  const args = process.argv.slice(2);
  let modelDir: string | undefined;
  let task: Task | undefined;
  let splitSeed = 13;
  let checkpoint: string | undefined;
  for (let i = 0; i < args.length; i++) {
    if (args[i] === "--model-dir") modelDir = args[++i];
    else if (args[i] === "--task") task = args[++i] as Task;
    else if (args[i] === "--split-seed") splitSeed = Number(args[++i]);
    else if (!checkpoint) checkpoint = args[i];
    else fail(`unexpected argument ${args[i]}`);
  }
  if (!modelDir || !task || !checkpoint) {
    fail("usage: downstream.js --model-dir <dir> --task ner|nli|qa "
         + "[--split-seed N] <checkpoint>");
  }
  if (task !== "ner" && task !== "nli" && task !== "qa") {
    fail(`unknown task ${task}`);
  }
  const request = await readRequest();
  const model = loadModel(modelDir!, checkpoint!);
  const validationFile = resolveValidationFile(
    modelDir!, task!, request.target_language,
  );
  emitResult(evaluateTask(model, task!, validationFile, splitSeed));
}

if (require.main === module) {
  main().catch((err) => fail(err instanceof Error ? err.message : String(err)));
}

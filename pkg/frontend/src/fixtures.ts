/**
 * Deterministic fixture generation: a tiny frozen backbone, a task
 * adapter, language-adapter checkpoints (pre / en / fr), the rename map
 * and validation data for all three tasks.
 *
 * Values are dyadic (k/256 with |k| <= 512), so they are exact in FP16 and
 * FP32 and checkpoint arithmetic on them reconstructs endpoints bit-exactly.
 *
 * Usage: node dist/fixtures.js <output-dir> [seed]
 */

import * as fs from "fs";
import * as path from "path";

import { saveCheckpoint, TensorInput } from "./safetensors";

function mulberry32(seed: number): () => number {
  let state = seed | 0;
  return () => {
    state = (state + 0x6d2b79f5) | 0;
    let t = Math.imul(state ^ (state >>> 15), 1 | state);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function dyadic(rand: () => number, count: number): Float32Array {
  const out = new Float32Array(count);
  for (let i = 0; i < count; i++) {
    out[i] = Math.round((rand() * 2 - 1) * 512) / 256;
  }
  return out;
}

export const CONFIG = {
  hidden_dim: 12,
  bottleneck_dim: 6,
  vocab_buckets: 97,
  ner_tags: ["O", "B-PER", "I-PER", "B-LOC", "I-LOC"],
  nli_labels: ["entailment", "neutral", "contradiction"],
};

export const RENAME_MAP: Record<string, string> = {
  "adapter.down.weight": "lang.down.weight",
  "adapter.down.bias": "lang.down.bias",
  "adapter.up.weight": "lang.up.weight",
  "adapter.up.bias": "lang.up.bias",
};

function adapterTensors(
  rand: () => number, prefix: string, scale: number,
): Record<string, TensorInput> {
  const { hidden_dim: h, bottleneck_dim: b } = CONFIG;
  const scaled = (count: number): Float32Array => {
    const values = dyadic(rand, count);
    for (let i = 0; i < count; i++) values[i] *= scale;
    return values;
  };
  return {
    [`${prefix}down.weight`]: { dtype: "F32", shape: [h, b], data: scaled(h * b) },
    [`${prefix}down.bias`]: { dtype: "F32", shape: [b], data: scaled(b) },
    [`${prefix}up.weight`]: { dtype: "F32", shape: [b, h], data: scaled(b * h) },
    [`${prefix}up.bias`]: { dtype: "F32", shape: [h], data: scaled(h) },
  };
}

const NER_DATA = [
  { tokens: ["maria", "visited", "lisbon"], tags: ["B-PER", "O", "B-LOC"] },
  { tokens: ["john", "and", "ana", "met"], tags: ["B-PER", "O", "B-PER", "O"] },
  { tokens: ["the", "river", "runs", "north"], tags: ["O", "O", "O", "O"] },
  { tokens: ["paris", "is", "calm"], tags: ["B-LOC", "O", "O"] },
  { tokens: ["omar", "left", "new", "york"], tags: ["B-PER", "O", "B-LOC", "I-LOC"] },
  { tokens: ["snow", "fell", "on", "oslo"], tags: ["O", "O", "O", "B-LOC"] },
  { tokens: ["lena", "reads"], tags: ["B-PER", "O"] },
  { tokens: ["trains", "to", "madrid", "stopped"], tags: ["O", "O", "B-LOC", "O"] },
];

const NLI_DATA = [
  { premise: "the cat sleeps on the mat", hypothesis: "an animal rests", label: "entailment" },
  { premise: "rain falls outside", hypothesis: "the street is dry", label: "contradiction" },
  { premise: "she bought bread", hypothesis: "she went shopping", label: "entailment" },
  { premise: "the team won the match", hypothesis: "the crowd was large", label: "neutral" },
  { premise: "he runs every morning", hypothesis: "he never exercises", label: "contradiction" },
  { premise: "birds fly south", hypothesis: "winter approaches", label: "neutral" },
  { premise: "the oven is hot", hypothesis: "something is baking", label: "neutral" },
  { premise: "all doors are locked", hypothesis: "one door is open", label: "contradiction" },
  { premise: "music plays loudly", hypothesis: "there is sound", label: "entailment" },
];

const QA_DATA = [
  { context: "the museum opens at nine in the morning", answer: "nine" },
  { context: "amara teaches physics at the old school", answer: "physics" },
  { context: "the bridge was built in granite last year", answer: "granite" },
  { context: "coffee grows well on the high plateau", answer: "the high plateau" },
  { context: "the festival lasts three days each spring", answer: "three days" },
  { context: "her office sits on the fourth floor", answer: "the fourth floor" },
  { context: "the recipe needs two eggs and flour", answer: "two eggs" },
  { context: "wind turbines stand along the coast road", answer: "the coast road" },
];

function writeJsonl(file: string, rows: object[]): void {
  fs.writeFileSync(file, rows.map((r) => JSON.stringify(r)).join("\n") + "\n");
}

/**
 * Writes the full fixture layout and returns the paths of the language
 * adapter checkpoints keyed by label ("pre", "en", "fr").
 */
export function generateFixtures(dir: string, seed = 7): Record<string, string> {
  fs.mkdirSync(dir, { recursive: true });
  const rand = mulberry32(seed);
  const { hidden_dim: h, vocab_buckets: v } = CONFIG;
  const tags = CONFIG.ner_tags.length;
  const labels = CONFIG.nli_labels.length;

  saveCheckpoint(path.join(dir, "base.safetensors"), {
    "embedding.weight": { dtype: "F32", shape: [v, h], data: dyadic(rand, v * h) },
    "heads.ner.weight": { dtype: "F32", shape: [h, tags], data: dyadic(rand, h * tags) },
    "heads.nli.weight": {
      dtype: "F32", shape: [2 * h, labels], data: dyadic(rand, 2 * h * labels),
    },
    "heads.qa.start": { dtype: "F32", shape: [h], data: dyadic(rand, h) },
    "heads.qa.end": { dtype: "F32", shape: [h], data: dyadic(rand, h) },
  });

  saveCheckpoint(
    path.join(dir, "task_adapter.safetensors"),
    adapterTensors(rand, "task.", 0.25),
  );

  const adapters: Record<string, string> = {};
  for (const label of ["pre", "en", "fr"]) {
    const file = path.join(dir, `adapter.${label}.safetensors`);
    // pre is the shared initialization; en/fr are distinct "trained" states
    const scale = label === "pre" ? 0.125 : 0.25;
    saveCheckpoint(file, adapterTensors(rand, "adapter.", scale),
                   { "la.label": label });
    adapters[label] = file;
  }

  fs.writeFileSync(
    path.join(dir, "rename_map.json"), JSON.stringify(RENAME_MAP, null, 2) + "\n",
  );
  fs.writeFileSync(
    path.join(dir, "config.json"), JSON.stringify(CONFIG, null, 2) + "\n",
  );

  writeJsonl(path.join(dir, "valid.ner.jsonl"), NER_DATA);
  writeJsonl(path.join(dir, "valid.nli.jsonl"), NLI_DATA);
  writeJsonl(path.join(dir, "valid.qa.jsonl"), QA_DATA);
  // a distinct per-language split to exercise target_language routing
  writeJsonl(path.join(dir, "valid.ner.es.jsonl"), NER_DATA.slice(0, 4));

  return adapters;
}

if (require.main === module) {
  const dir = process.argv[2];
  if (!dir) {
    console.error("usage: fixtures.js <output-dir> [seed]");
    process.exit(1);
  }
  const seed = process.argv[3] ? Number(process.argv[3]) : 7;
  const adapters = generateFixtures(dir, seed);
  console.log(JSON.stringify({ dir, adapters }, null, 2));
}

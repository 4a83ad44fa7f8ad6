/**
 * Fixture-scale adapter model with the standard modular routing order:
 * embedding -> language adapter -> task adapter -> task head.
 *
 * The frozen backbone (embeddings + heads) and the task adapter come from
 * the model directory; the language adapter comes from the merged
 * checkpoint under evaluation, with its tensor names translated through a
 * configuration-driven rename map (no fuzzy matching: a missing mapping is
 * an error).
 *
 * Everything is plain FP64 JS arithmetic over FP32 inputs, so two
 * checkpoints with identical values always score identically.
 */

import * as fs from "fs";
import * as path from "path";

import { Checkpoint, Tensor, loadCheckpoint } from "./safetensors";

export interface ModelConfig {
  hidden_dim: number;
  bottleneck_dim: number;
  vocab_buckets: number;
  ner_tags: string[];
  nli_labels: string[];
}

export interface AdapterWeights {
  downWeight: Tensor; // [hidden, bottleneck]
  downBias: Tensor; // [bottleneck]
  upWeight: Tensor; // [bottleneck, hidden]
  upBias: Tensor; // [hidden]
}

export interface Model {
  config: ModelConfig;
  embedding: Tensor; // [vocab_buckets, hidden]
  nerHead: Tensor; // [hidden, |ner_tags|]
  nliHead: Tensor; // [2*hidden, |nli_labels|]
  qaStart: Tensor; // [hidden]
  qaEnd: Tensor; // [hidden]
  taskAdapter: AdapterWeights;
  langAdapter: AdapterWeights;
}

const ADAPTER_SLOTS = [
  "lang.down.weight",
  "lang.down.bias",
  "lang.up.weight",
  "lang.up.bias",
] as const;

/** FNV-1a over UTF-8 bytes; stable across runs and platforms. */
export function hashToken(token: string): number {
  let h = 0x811c9dc5;
  const bytes = Buffer.from(token, "utf8");
  for (const b of bytes) {
    h ^= b;
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h >>> 0;
}

export function tokenize(text: string): string[] {
  return text.toLowerCase().split(/\s+/).filter((t) => t.length > 0);
}

function getTensor(ckpt: Checkpoint, name: string, what: string): Tensor {
  const t = ckpt.tensors.get(name);
  if (!t) throw new Error(`${what}: missing tensor ${name}`);
  return t;
}

function adapterFromSlots(
  tensors: Map<string, Tensor>, prefix: string, what: string,
): AdapterWeights {
  const get = (slot: string): Tensor => {
    const t = tensors.get(`${prefix}${slot}`);
    if (!t) throw new Error(`${what}: missing adapter slot ${prefix}${slot}`);
    return t;
  };
  return {
    downWeight: get("down.weight"),
    downBias: get("down.bias"),
    upWeight: get("up.weight"),
    upBias: get("up.bias"),
  };
}

/**
 * Translate merged-checkpoint tensor names to adapter slot names using the
 * rename map; every slot must be covered.
 */
export function mapLanguageAdapter(
  checkpoint: Checkpoint, renameMap: Record<string, string>,
): Map<string, Tensor> {
  const mapped = new Map<string, Tensor>();
  for (const [sourceName, slotName] of Object.entries(renameMap)) {
    const tensor = checkpoint.tensors.get(sourceName);
    if (!tensor) {
      throw new Error(
        `name mapping: checkpoint has no tensor ${sourceName} (wanted for ${slotName})`,
      );
    }
    mapped.set(slotName, tensor);
  }
  for (const slot of ADAPTER_SLOTS) {
    if (!mapped.has(slot)) {
      throw new Error(`name mapping: no checkpoint tensor mapped to slot ${slot}`);
    }
  }
  return mapped;
}

export function loadModel(modelDir: string, mergedCheckpointPath: string): Model {
  const config = JSON.parse(
    fs.readFileSync(path.join(modelDir, "config.json"), "utf8"),
  ) as ModelConfig;
  const base = loadCheckpoint(path.join(modelDir, "base.safetensors"));
  const task = loadCheckpoint(path.join(modelDir, "task_adapter.safetensors"));
  const renameMap = JSON.parse(
    fs.readFileSync(path.join(modelDir, "rename_map.json"), "utf8"),
  ) as Record<string, string>;
  const merged = loadCheckpoint(mergedCheckpointPath);
  const langTensors = mapLanguageAdapter(merged, renameMap);

  return {
    config,
    embedding: getTensor(base, "embedding.weight", "base model"),
    nerHead: getTensor(base, "heads.ner.weight", "base model"),
    nliHead: getTensor(base, "heads.nli.weight", "base model"),
    qaStart: getTensor(base, "heads.qa.start", "base model"),
    qaEnd: getTensor(base, "heads.qa.end", "base model"),
    taskAdapter: adapterFromSlots(task.tensors, "task.", "task adapter"),
    langAdapter: adapterFromSlots(langTensors, "lang.", "language adapter"),
  };
}

function applyAdapter(h: number[], adapter: AdapterWeights, hidden: number,
                      bottleneck: number): number[] {
  // residual bottleneck: h + up(relu(down(h)))
  const z = new Array<number>(bottleneck).fill(0);
  for (let j = 0; j < bottleneck; j++) {
    let acc = adapter.downBias.data[j];
    for (let i = 0; i < hidden; i++) {
      acc += h[i] * adapter.downWeight.data[i * bottleneck + j];
    }
    z[j] = acc > 0 ? acc : 0;
  }
  const out = h.slice();
  for (let i = 0; i < hidden; i++) {
    let acc = adapter.upBias.data[i];
    for (let j = 0; j < bottleneck; j++) {
      acc += z[j] * adapter.upWeight.data[j * hidden + i];
    }
    out[i] += acc;
  }
  return out;
}

/** Embed one token and route it language adapter first, then task adapter. */
export function encodeToken(model: Model, token: string): number[] {
  const { hidden_dim: hidden, bottleneck_dim: bottleneck, vocab_buckets } =
    model.config;
  const row = hashToken(token) % vocab_buckets;
  let h = new Array<number>(hidden);
  for (let i = 0; i < hidden; i++) {
    h[i] = model.embedding.data[row * hidden + i];
  }
  h = applyAdapter(h, model.langAdapter, hidden, bottleneck);
  h = applyAdapter(h, model.taskAdapter, hidden, bottleneck);
  return h;
}

export function meanPool(vectors: number[][]): number[] {
  const hidden = vectors[0].length;
  const out = new Array<number>(hidden).fill(0);
  for (const v of vectors) for (let i = 0; i < hidden; i++) out[i] += v[i];
  for (let i = 0; i < hidden; i++) out[i] /= vectors.length;
  return out;
}

export function argmax(scores: number[]): number {
  let best = 0;
  for (let i = 1; i < scores.length; i++) if (scores[i] > scores[best]) best = i;
  return best;
}

export function predictNerTags(model: Model, tokens: string[]): string[] {
  const tags = model.config.ner_tags;
  const hidden = model.config.hidden_dim;
  return tokens.map((token) => {
    const h = encodeToken(model, token);
    const scores = tags.map((_, t) => {
      let acc = 0;
      for (let i = 0; i < hidden; i++) {
        acc += h[i] * model.nerHead.data[i * tags.length + t];
      }
      return acc;
    });
    return tags[argmax(scores)];
  });
}

export function predictNliLabel(
  model: Model, premise: string, hypothesis: string,
): string {
  const labels = model.config.nli_labels;
  const hidden = model.config.hidden_dim;
  const p = meanPool(tokenize(premise).map((t) => encodeToken(model, t)));
  const q = meanPool(tokenize(hypothesis).map((t) => encodeToken(model, t)));
  const features = p.concat(q); // [2*hidden]
  const scores = labels.map((_, l) => {
    let acc = 0;
    for (let i = 0; i < 2 * hidden; i++) {
      acc += features[i] * model.nliHead.data[i * labels.length + l];
    }
    return acc;
  });
  return labels[argmax(scores)];
}

const QA_MAX_SPAN = 8;

/** Pick the (start, end) context span maximizing start+end scores. */
export function predictQaSpan(model: Model, contextTokens: string[]): string[] {
  const hidden = model.config.hidden_dim;
  const encoded = contextTokens.map((t) => encodeToken(model, t));
  const startScores = encoded.map((h) => {
    let acc = 0;
    for (let i = 0; i < hidden; i++) acc += h[i] * model.qaStart.data[i];
    return acc;
  });
  const endScores = encoded.map((h) => {
    let acc = 0;
    for (let i = 0; i < hidden; i++) acc += h[i] * model.qaEnd.data[i];
    return acc;
  });
  let best: [number, number] = [0, 0];
  let bestScore = -Infinity;
  for (let s = 0; s < contextTokens.length; s++) {
    for (let e = s; e < Math.min(contextTokens.length, s + QA_MAX_SPAN); e++) {
      const score = startScores[s] + endScores[e];
      if (score > bestScore) {
        bestScore = score;
        best = [s, e];
      }
    }
  }
  return contextTokens.slice(best[0], best[1] + 1);
}

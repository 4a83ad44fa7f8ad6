/**
 * Task metrics: entity-span F1 for NER, accuracy for NLI, token-bag F1
 * for QA span extraction.
 */

export interface Span {
  start: number;
  end: number; // exclusive
  type: string;
}

/** Decode BIO tags into typed spans ("B-PER", "I-PER", "O", ...). */
export function bioToSpans(tags: string[]): Span[] {
  const spans: Span[] = [];
  let current: Span | null = null;
  for (let i = 0; i < tags.length; i++) {
    const tag = tags[i];
    if (tag.startsWith("B-")) {
      if (current) spans.push(current);
      current = { start: i, end: i + 1, type: tag.slice(2) };
    } else if (tag.startsWith("I-") && current && tag.slice(2) === current.type) {
      current.end = i + 1;
    } else {
      if (current) spans.push(current);
      current = null;
    }
  }
  if (current) spans.push(current);
  return spans;
}

function spanKey(s: Span): string {
  return `${s.start}:${s.end}:${s.type}`;
}

/** Micro-averaged exact-match span F1 over a corpus. */
export function spanF1(pred: Span[][], gold: Span[][]): number {
  let tp = 0;
  let predTotal = 0;
  let goldTotal = 0;
  for (let i = 0; i < gold.length; i++) {
    const goldSet = new Set(gold[i].map(spanKey));
    predTotal += pred[i].length;
    goldTotal += gold[i].length;
    for (const span of pred[i]) {
      if (goldSet.has(spanKey(span))) tp += 1;
    }
  }
  if (predTotal === 0 && goldTotal === 0) return 1;
  if (tp === 0) return 0;
  const precision = tp / predTotal;
  const recall = tp / goldTotal;
  return (2 * precision * recall) / (precision + recall);
}

export function accuracy(pred: string[], gold: string[]): number {
  if (pred.length !== gold.length) throw new Error("length mismatch");
  if (pred.length === 0) return 0;
  let hits = 0;
  for (let i = 0; i < pred.length; i++) if (pred[i] === gold[i]) hits += 1;
  return hits / pred.length;
}

/** Bag-of-tokens F1 between a predicted and a gold answer. */
export function tokenF1(pred: string[], gold: string[]): number {
  if (pred.length === 0 && gold.length === 0) return 1;
  if (pred.length === 0 || gold.length === 0) return 0;
  const counts = new Map<string, number>();
  for (const t of gold) counts.set(t, (counts.get(t) ?? 0) + 1);
  let overlap = 0;
  for (const t of pred) {
    const c = counts.get(t) ?? 0;
    if (c > 0) {
      overlap += 1;
      counts.set(t, c - 1);
    }
  }
  if (overlap === 0) return 0;
  const precision = overlap / pred.length;
  const recall = overlap / gold.length;
  return (2 * precision * recall) / (precision + recall);
}

export function mean(values: number[]): number {
  if (values.length === 0) return 0;
  return values.reduce((a, b) => a + b, 0) / values.length;
}

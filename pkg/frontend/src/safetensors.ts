/**
 * Minimal safetensors container reader/writer (F32 and F16 only).
 *
 * Layout: 8-byte little-endian unsigned header length N, then N bytes of
 * JSON mapping tensor name -> {dtype, shape, data_offsets} plus an
 * optional "__metadata__" string map, then raw little-endian tensor data
 * addressed by the offsets.
 *
 * Standalone on purpose: the bridge consumes checkpoints produced by the
 * core engine purely through this byte format.
 */

import * as fs from "fs";

export type Dtype = "F32" | "F16";

export interface Tensor {
  dtype: Dtype;
  shape: number[];
  /** Values upconverted to JS numbers via Float32 semantics. */
  data: Float32Array;
}

export interface Checkpoint {
  tensors: Map<string, Tensor>;
  metadata: Record<string, string>;
}

const DTYPE_BYTES: Record<Dtype, number> = { F32: 4, F16: 2 };

export function f16ToNumber(bits: number): number {
  const sign = bits & 0x8000 ? -1 : 1;
  const exp = (bits >> 10) & 0x1f;
  const frac = bits & 0x3ff;
  if (exp === 0) return sign * frac * 2 ** -24; // subnormal / zero
  if (exp === 31) return frac ? NaN : sign * Infinity;
  return sign * (1 + frac / 1024) * 2 ** (exp - 15);
}

/** Float -> half bits with IEEE round-to-nearest-even. */
export function numberToF16(value: number): number {
  const f32 = new Float32Array(1);
  const u32 = new Uint32Array(f32.buffer);
  f32[0] = value;
  const bits = u32[0];
  const sign = (bits >>> 16) & 0x8000;
  const exp = (bits >>> 23) & 0xff;
  let mant = bits & 0x7fffff;

  if (exp === 0xff) return sign | 0x7c00 | (mant ? 0x200 : 0); // inf / nan
  let e = exp - 127 + 15;
  if (e >= 31) return sign | 0x7c00; // overflow -> inf
  if (e <= 0) {
    // subnormal half: shift mantissa (with implicit bit) into place
    if (e < -10) return sign; // underflow -> signed zero
    mant |= 0x800000;
    const shift = 14 - e;
    const half = mant >> shift;
    const round = mant & (1 << (shift - 1));
    const sticky = mant & ((1 << (shift - 1)) - 1);
    if (round && (sticky || half & 1)) return sign | (half + 1);
    return sign | half;
  }
  let half = sign | (e << 10) | (mant >> 13);
  const round = mant & 0x1000;
  const sticky = mant & 0x0fff;
  if (round && (sticky || half & 1)) half += 1; // carry may bump the exponent, which is correct
  return half;
}

function numElements(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export function loadCheckpoint(path: string): Checkpoint {
  const buf = fs.readFileSync(path);
  if (buf.length < 8) throw new Error(`${path}: too small for a header`);
  const headerLen = Number(buf.readBigUInt64LE(0));
  if (8 + headerLen > buf.length) {
    throw new Error(`${path}: header length ${headerLen} overruns file`);
  }
  let header: Record<string, unknown>;
  try {
    header = JSON.parse(buf.subarray(8, 8 + headerLen).toString("utf8"));
  } catch (err) {
    throw new Error(`${path}: header is not valid JSON: ${err}`);
  }
  const dataStart = 8 + headerLen;
  const dataSize = buf.length - dataStart;

  const metadata = (header["__metadata__"] ?? {}) as Record<string, string>;
  delete header["__metadata__"];

  const tensors = new Map<string, Tensor>();
  for (const name of Object.keys(header).sort()) {
    const entry = header[name] as {
      dtype: string;
      shape: number[];
      data_offsets: [number, number];
    };
    const dtype = entry.dtype as Dtype;
    if (dtype !== "F32" && dtype !== "F16") {
      throw new Error(`${path}: tensor ${name}: unsupported dtype ${entry.dtype}`);
    }
    const [begin, end] = entry.data_offsets;
    if (!(begin >= 0 && begin <= end && end <= dataSize)) {
      throw new Error(`${path}: tensor ${name}: offsets out of bounds`);
    }
    const count = numElements(entry.shape);
    if (end - begin !== count * DTYPE_BYTES[dtype]) {
      throw new Error(`${path}: tensor ${name}: byte span does not match shape`);
    }
    // copy into a fresh buffer: node Buffers are not alignment-guaranteed
    const bytes = new Uint8Array(end - begin);
    bytes.set(buf.subarray(dataStart + begin, dataStart + end));
    const data = new Float32Array(count);
    if (dtype === "F32") {
      data.set(new Float32Array(bytes.buffer));
    } else {
      const halves = new Uint16Array(bytes.buffer);
      for (let i = 0; i < count; i++) data[i] = Math.fround(f16ToNumber(halves[i]));
    }
    tensors.set(name, { dtype, shape: entry.shape.slice(), data });
  }
  return { tensors, metadata };
}

export interface TensorInput {
  dtype: Dtype;
  shape: number[];
  data: Float32Array | number[];
}

/** Canonical write: sorted names, compact JSON padded to an 8-byte boundary. */
export function saveCheckpoint(
  path: string,
  tensors: Record<string, TensorInput>,
  metadata?: Record<string, string>,
): void {
  const names = Object.keys(tensors).sort();
  const header: Record<string, unknown> = {};
  if (metadata && Object.keys(metadata).length > 0) {
    const sorted: Record<string, string> = {};
    for (const k of Object.keys(metadata).sort()) sorted[k] = metadata[k];
    header["__metadata__"] = sorted;
  }
  const blobs: Buffer[] = [];
  let offset = 0;
  for (const name of names) {
    const { dtype, shape, data } = tensors[name];
    const values = data instanceof Float32Array ? data : Float32Array.from(data);
    if (values.length !== numElements(shape)) {
      throw new Error(`tensor ${name}: data length does not match shape`);
    }
    let raw: Buffer;
    if (dtype === "F32") {
      raw = Buffer.from(values.buffer.slice(values.byteOffset,
                                            values.byteOffset + values.byteLength));
    } else {
      raw = Buffer.alloc(values.length * 2);
      for (let i = 0; i < values.length; i++) {
        raw.writeUInt16LE(numberToF16(values[i]), i * 2);
      }
    }
    header[name] = {
      dtype,
      shape: shape.slice(),
      data_offsets: [offset, offset + raw.length],
    };
    blobs.push(raw);
    offset += raw.length;
  }
  let encoded = Buffer.from(JSON.stringify(header), "utf8");
  const pad = (8 - (encoded.length % 8)) % 8;
  if (pad) encoded = Buffer.concat([encoded, Buffer.alloc(pad, 0x20)]);
  const head = Buffer.alloc(8);
  head.writeBigUInt64LE(BigInt(encoded.length), 0);
  fs.writeFileSync(path, Buffer.concat([head, encoded, ...blobs]));
}

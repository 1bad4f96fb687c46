/**
 * Dataset export into the engine's DatasetFile format ("inputs" f32,
 * "labels" i32). Real-data loaders read locally available source files;
 * the synthetic path generates seeded data with the right shapes so the
 * toolchain stays exercisable without dataset downloads.
 */

import * as fs from 'fs';
import * as path from 'path';
import { Entry, f32, i32, serialize } from './container';
import { CLIP_SAMPLES, NUM_COEFFS, NUM_FRAMES, mfcc, readWav } from './mfcc';
import { Prng } from './prng';

export const DATASET_NAMES = ['cifar10', 'speech_commands_mfcc', 'vww', 'uci_har'] as const;
export type DatasetName = (typeof DATASET_NAMES)[number];

export interface Dataset {
  dims: number[]; // [N, ...sample shape]
  inputs: Float32Array;
  labels: Int32Array | null;
}

export function writeDataset(ds: Dataset, outPath: string): void {
  const entries = new Map<string, Entry>();
  entries.set('inputs', f32(ds.dims, ds.inputs));
  if (ds.labels) entries.set('labels', { dims: [ds.labels.length], data: ds.labels });
  fs.mkdirSync(path.dirname(outPath), { recursive: true });
  fs.writeFileSync(outPath, serialize(entries));
}

// -- CIFAR-10 (binary batches: 1 label byte + 3072 CHW bytes per record) ------

export function loadCifar10(sourceDir: string, split: 'train' | 'test', limit: number): Dataset {
  const files = split === 'train'
    ? [1, 2, 3, 4, 5].map((i) => path.join(sourceDir, `data_batch_${i}.bin`))
    : [path.join(sourceDir, 'test_batch.bin')];
  const record = 1 + 3072;
  const images: Float32Array[] = [];
  const labels: number[] = [];
  for (const file of files) {
    if (!fs.existsSync(file)) throw new Error(`missing CIFAR-10 batch ${file}`);
    const buf = fs.readFileSync(file);
    const count = Math.floor(buf.length / record);
    for (let r = 0; r < count && images.length < limit; r++) {
      const base = r * record;
      labels.push(buf[base]);
      const img = new Float32Array(32 * 32 * 3);
      // planes are R,G,B each 32x32 row-major; output is HWC scaled to [0,1]
      for (let c = 0; c < 3; c++) {
        for (let p = 0; p < 1024; p++) {
          img[p * 3 + c] = buf[base + 1 + c * 1024 + p] / 255;
        }
      }
      images.push(img);
    }
    if (images.length >= limit) break;
  }
  return pack(images, labels, [32, 32, 3]);
}

// -- UCI HAR (Inertial Signals text matrices: 9 channels x 128 samples) -------

const HAR_SIGNALS = [
  'body_acc_x', 'body_acc_y', 'body_acc_z',
  'body_gyro_x', 'body_gyro_y', 'body_gyro_z',
  'total_acc_x', 'total_acc_y', 'total_acc_z',
];

export function loadUciHar(sourceDir: string, split: 'train' | 'test', limit: number): Dataset {
  const sigDir = path.join(sourceDir, split, 'Inertial Signals');
  const channels = HAR_SIGNALS.map((name) => {
    const file = path.join(sigDir, `${name}_${split}.txt`);
    if (!fs.existsSync(file)) throw new Error(`missing UCI-HAR signal ${file}`);
    return fs.readFileSync(file, 'utf-8').trim().split('\n')
      .map((line) => line.trim().split(/\s+/).map(Number));
  });
  const yFile = path.join(sourceDir, split, `y_${split}.txt`);
  const labels = fs.readFileSync(yFile, 'utf-8').trim().split('\n').map((v) => Number(v) - 1);
  const n = Math.min(limit, channels[0].length);
  const images: Float32Array[] = [];
  for (let r = 0; r < n; r++) {
    const img = new Float32Array(128 * 9);
    for (let c = 0; c < 9; c++) {
      for (let tIdx = 0; tIdx < 128; tIdx++) img[tIdx * 9 + c] = channels[c][r][tIdx];
    }
    images.push(img);
  }
  return pack(images, labels.slice(0, n), [128, 9]);
}

// -- Speech Commands (wav tree: <label>/<clip>.wav) ----------------------------

export const KWS_LABELS = [
  'down', 'go', 'left', 'no', 'off', 'on', 'right', 'stop', 'up', 'yes',
  '_silence_', '_unknown_',
];

export function loadSpeechCommands(sourceDir: string, limit: number): Dataset {
  const images: Float32Array[] = [];
  const labels: number[] = [];
  for (const label of KWS_LABELS) {
    const dir = path.join(sourceDir, label);
    if (!fs.existsSync(dir)) continue;
    for (const f of fs.readdirSync(dir).sort()) {
      if (!f.endsWith('.wav') || images.length >= limit) break;
      const { samples } = readWav(fs.readFileSync(path.join(dir, f)));
      images.push(mfcc(samples));
      labels.push(KWS_LABELS.indexOf(label));
    }
  }
  if (!images.length) throw new Error(`no wav clips found under ${sourceDir}`);
  return pack(images, labels, [NUM_COEFFS, NUM_FRAMES, 1]);
}

// -- VWW (index file: "<relative-path-to-raw-96x96x3-rgb> <label>" lines) -----

export function loadVww(sourceDir: string, split: 'train' | 'test', limit: number): Dataset {
  const index = path.join(sourceDir, `${split}.txt`);
  if (!fs.existsSync(index)) throw new Error(`missing VWW index ${index}`);
  const images: Float32Array[] = [];
  const labels: number[] = [];
  for (const line of fs.readFileSync(index, 'utf-8').trim().split('\n')) {
    if (images.length >= limit) break;
    const [rel, label] = line.trim().split(/\s+/);
    const raw = fs.readFileSync(path.join(sourceDir, rel));
    if (raw.length !== 96 * 96 * 3) throw new Error(`${rel}: expected ${96 * 96 * 3} bytes`);
    const img = new Float32Array(raw.length);
    for (let i = 0; i < raw.length; i++) img[i] = raw[i] / 255;
    images.push(img);
    labels.push(Number(label));
  }
  return pack(images, labels, [96, 96, 3]);
}

// -- synthetic fallback ---------------------------------------------------------

export function synthetic(name: DatasetName, n: number, seed: number): Dataset {
  const rng = new Prng(seed);
  if (name === 'speech_commands_mfcc') {
    // MFCC of seeded tone+noise clips: realistic value ranges for free
    const images: Float32Array[] = [];
    const labels: number[] = [];
    for (let i = 0; i < n; i++) {
      const freq = 100 + rng.uniform() * 3000;
      const clip = new Float32Array(CLIP_SAMPLES);
      for (let s = 0; s < CLIP_SAMPLES; s++) {
        clip[s] = 0.4 * Math.sin((2 * Math.PI * freq * s) / 16000) + 0.05 * rng.normal();
      }
      images.push(mfcc(clip));
      labels.push(rng.int(12));
    }
    return pack(images, labels, [NUM_COEFFS, NUM_FRAMES, 1]);
  }
  const shapes: Record<string, [number[], number]> = {
    cifar10: [[32, 32, 3], 10],
    vww: [[96, 96, 3], 2],
    uci_har: [[128, 9], 6],
  };
  const [shape, classes] = shapes[name];
  const elems = shape.reduce((a, b) => a * b, 1);
  const inputs = name === 'uci_har' ? rng.normals(n * elems) : rng.uniforms(n * elems, 0, 1);
  const labels = new Int32Array(n);
  for (let i = 0; i < n; i++) labels[i] = rng.int(classes);
  return { dims: [n, ...shape], inputs, labels };
}

function pack(images: Float32Array[], labels: number[], shape: number[]): Dataset {
  const elems = shape.reduce((a, b) => a * b, 1);
  const inputs = new Float32Array(images.length * elems);
  images.forEach((img, i) => inputs.set(img, i * elems));
  return { dims: [images.length, ...shape], inputs, labels: Int32Array.from(labels) };
}

export function exportDataset(
  name: DatasetName, split: 'train' | 'test', limit: number,
  opts: { sourceDir?: string; syntheticSeed?: number },
): Dataset {
  if (opts.sourceDir) {
    if (name === 'cifar10') return loadCifar10(opts.sourceDir, split, limit);
    if (name === 'uci_har') return loadUciHar(opts.sourceDir, split, limit);
    if (name === 'vww') return loadVww(opts.sourceDir, split, limit);
    return loadSpeechCommands(opts.sourceDir, limit);
  }
  return synthetic(name, limit, opts.syntheticSeed ?? 0);
}

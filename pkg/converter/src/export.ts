/**
 * Weight and parity-fixture export: runs the tfjs model on seeded inputs
 * and writes the engine-compatible containers.
 */

import * as tf from '@tensorflow/tfjs';
import * as fs from 'fs';
import * as path from 'path';
import { Entry, f32, serialize } from './container';
import { BuiltModel, ModelName, buildModel, sampleInputs } from './models';
import { Prng } from './prng';

export function exportWeights(built: BuiltModel, outPath: string): void {
  fs.mkdirSync(path.dirname(outPath), { recursive: true });
  fs.writeFileSync(outPath, serialize(built.params));
}

export interface ParityOptions {
  samples: number;
  seed: number;
}

export async function exportParityFixture(
  name: ModelName, built: BuiltModel, opts: ParityOptions, outPath: string,
): Promise<void> {
  const rng = new Prng(opts.seed ^ 0x5f3759df);
  const inputs = sampleInputs(name, opts.samples, rng);
  const x = tf.tensor(inputs.data, inputs.dims as number[]);
  const outs = built.model.predict(x) as tf.Tensor | tf.Tensor[];
  const outList = Array.isArray(outs) ? outs : [outs];
  const entries = new Map<string, Entry>();
  entries.set('inputs', f32(inputs.dims, inputs.data));
  const logits = outList[0];
  entries.set('logits', f32(logits.shape as number[], await logits.data() as Float32Array));
  for (let i = 1; i < outList.length; i++) {
    const t = outList[i];
    entries.set(
      `act.${built.tapNames[i - 1]}`,
      f32(t.shape as number[], await t.data() as Float32Array),
    );
  }
  fs.mkdirSync(path.dirname(outPath), { recursive: true });
  fs.writeFileSync(outPath, serialize(entries));
  x.dispose();
  outList.forEach((t) => t.dispose());
}

export async function exportModelPair(
  name: ModelName, seed: number, samples: number, outDir: string,
): Promise<{ weights: string; parity: string }> {
  const built = buildModel(name, seed);
  const weights = path.join(outDir, `${name}.weights.tqt`);
  const parity = path.join(outDir, `${name}.parity.tqt`);
  exportWeights(built, weights);
  await exportParityFixture(name, built, { samples, seed }, parity);
  return { weights, parity };
}

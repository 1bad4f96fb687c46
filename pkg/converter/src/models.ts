/**
 * The four tinyML reference architectures built with tfjs, with
 * deterministic seeded weights and parameter names matching the engine's
 * layer naming, so exported containers load directly into build_model.
 *
 * Batchnorm stats are exported raw (unfused); epsilon is pinned to the
 * engine's 1e-5 so folded and unfolded evaluations agree.
 */

import * as tf from '@tensorflow/tfjs';
import { Entry, f32 } from './container';
import { Prng } from './prng';

export const MODEL_NAMES = ['res8', 'dscnn', 'mobilenetv1', 'har_cnn'] as const;
export type ModelName = (typeof MODEL_NAMES)[number];

const BN_EPS = 1e-5;

export interface BuiltModel {
  model: tf.LayersModel; // outputs: [logits, ...taps]
  tapNames: string[];
  params: Map<string, Entry>;
  inputShape: number[];
}

class Builder {
  params = new Map<string, Entry>();
  taps: tf.SymbolicTensor[] = [];
  tapNames: string[] = [];

  constructor(private rng: Prng) {}

  private he(n: number, fanIn: number): Float32Array {
    return this.rng.normals(n, Math.sqrt(2.0 / fanIn));
  }

  conv2d(name: string, x: tf.SymbolicTensor, cout: number,
         kernel: [number, number], stride: number | [number, number],
         padding: 'same' | 'valid' = 'same'): tf.SymbolicTensor {
    const cin = x.shape[x.shape.length - 1] as number;
    const layer = tf.layers.conv2d({
      name, filters: cout, kernelSize: kernel, strides: stride, padding, useBias: true,
    });
    const y = layer.apply(x) as tf.SymbolicTensor;
    const kDims = [kernel[0], kernel[1], cin, cout];
    const kData = this.he(kDims.reduce((a, b) => a * b, 1), kernel[0] * kernel[1] * cin);
    const bData = this.rng.normals(cout, 0.05);
    layer.setWeights([tf.tensor(kData, kDims as [number, number, number, number]), tf.tensor1d(bData)]);
    this.params.set(`${name}.weight`, f32(kDims, kData));
    this.params.set(`${name}.bias`, f32([cout], bData));
    return y;
  }

  dwconv2d(name: string, x: tf.SymbolicTensor,
           kernel: [number, number], stride: number | [number, number]): tf.SymbolicTensor {
    const c = x.shape[x.shape.length - 1] as number;
    const layer = tf.layers.depthwiseConv2d({
      name, kernelSize: kernel, strides: stride, padding: 'same', depthMultiplier: 1, useBias: true,
    });
    const y = layer.apply(x) as tf.SymbolicTensor;
    const n = kernel[0] * kernel[1] * c;
    const kData = this.he(n, kernel[0] * kernel[1]);
    const bData = this.rng.normals(c, 0.05);
    layer.setWeights([tf.tensor(kData, [kernel[0], kernel[1], c, 1]), tf.tensor1d(bData)]);
    // depthMultiplier 1: [kh, kw, c, 1] and the engine's [kh, kw, c] share layout
    this.params.set(`${name}.weight`, f32([kernel[0], kernel[1], c], kData));
    this.params.set(`${name}.bias`, f32([c], bData));
    return y;
  }

  conv1d(name: string, x: tf.SymbolicTensor, cout: number, kernel: number,
         padding: 'same' | 'valid' = 'valid'): tf.SymbolicTensor {
    const cin = x.shape[x.shape.length - 1] as number;
    const layer = tf.layers.conv1d({
      name, filters: cout, kernelSize: kernel, strides: 1, padding, useBias: true,
    });
    const y = layer.apply(x) as tf.SymbolicTensor;
    const kDims = [kernel, cin, cout];
    const kData = this.he(kernel * cin * cout, kernel * cin);
    const bData = this.rng.normals(cout, 0.05);
    layer.setWeights([tf.tensor(kData, kDims as [number, number, number]), tf.tensor1d(bData)]);
    this.params.set(`${name}.weight`, f32(kDims, kData));
    this.params.set(`${name}.bias`, f32([cout], bData));
    return y;
  }

  dense(name: string, x: tf.SymbolicTensor, cout: number): tf.SymbolicTensor {
    const cin = x.shape[x.shape.length - 1] as number;
    const layer = tf.layers.dense({ name, units: cout, useBias: true });
    const y = layer.apply(x) as tf.SymbolicTensor;
    const kData = this.he(cin * cout, cin);
    const bData = this.rng.normals(cout, 0.05);
    layer.setWeights([tf.tensor2d(kData, [cin, cout]), tf.tensor1d(bData)]);
    this.params.set(`${name}.weight`, f32([cin, cout], kData));
    this.params.set(`${name}.bias`, f32([cout], bData));
    return y;
  }

  bn(name: string, x: tf.SymbolicTensor): tf.SymbolicTensor {
    const c = x.shape[x.shape.length - 1] as number;
    const layer = tf.layers.batchNormalization({ name, epsilon: BN_EPS });
    const y = layer.apply(x) as tf.SymbolicTensor;
    const gamma = this.rng.uniforms(c, 0.8, 1.2);
    const beta = this.rng.normals(c, 0.1);
    const mean = this.rng.normals(c, 0.1);
    const variance = this.rng.uniforms(c, 0.5, 1.5);
    layer.setWeights([tf.tensor1d(gamma), tf.tensor1d(beta), tf.tensor1d(mean), tf.tensor1d(variance)]);
    this.params.set(`${name}.gamma`, f32([c], gamma));
    this.params.set(`${name}.beta`, f32([c], beta));
    this.params.set(`${name}.mean`, f32([c], mean));
    this.params.set(`${name}.var`, f32([c], variance));
    return y;
  }

  relu(name: string, x: tf.SymbolicTensor): tf.SymbolicTensor {
    return tf.layers.reLU({ name }).apply(x) as tf.SymbolicTensor;
  }

  tap(engineLayerName: string, x: tf.SymbolicTensor): tf.SymbolicTensor {
    this.taps.push(x);
    this.tapNames.push(engineLayerName);
    return x;
  }

  convBnRelu(name: string, x: tf.SymbolicTensor, cout: number,
             kernel: [number, number], stride: number | [number, number]): tf.SymbolicTensor {
    let y = this.conv2d(name, x, cout, kernel, stride);
    y = this.bn(`${name}_bn`, y);
    return this.relu(`${name}_relu`, y);
  }

  dsBlock(name: string, x: tf.SymbolicTensor, cout: number, stride: number): tf.SymbolicTensor {
    let y = this.dwconv2d(`${name}_dw`, x, [3, 3], stride);
    y = this.bn(`${name}_dw_bn`, y);
    y = this.relu(`${name}_dw_relu`, y);
    y = this.conv2d(`${name}_pw`, y, cout, [1, 1], 1);
    y = this.bn(`${name}_pw_bn`, y);
    return this.relu(`${name}_pw_relu`, y);
  }

  resBlock(name: string, x: tf.SymbolicTensor, cout: number, stride: number): tf.SymbolicTensor {
    let y = this.conv2d(`${name}_conv1`, x, cout, [3, 3], stride);
    y = this.bn(`${name}_bn1`, y);
    y = this.relu(`${name}_relu1`, y);
    y = this.conv2d(`${name}_conv2`, y, cout, [3, 3], 1);
    y = this.bn(`${name}_bn2`, y);
    const skip = stride === 1 ? x : this.conv2d(`${name}_skip`, x, cout, [1, 1], stride);
    const added = tf.layers.add({ name: `${name}_add` }).apply([y, skip]) as tf.SymbolicTensor;
    return this.relu(`${name}_relu2`, added);
  }
}

const MOBILENET_BLOCKS: Array<[number, number]> = [
  [16, 1], [32, 2], [32, 1], [64, 2], [64, 1], [128, 2],
  [128, 1], [128, 1], [128, 1], [128, 1], [128, 1], [256, 2], [256, 1],
];

export function buildModel(name: ModelName, seed: number): BuiltModel {
  const rng = new Prng(seed);
  const b = new Builder(rng);
  let inputShape: number[];
  let logits: tf.SymbolicTensor;
  let input: tf.SymbolicTensor;

  if (name === 'res8') {
    inputShape = [32, 32, 3];
    input = tf.input({ shape: inputShape });
    let y = b.convBnRelu('stem', input, 16, [3, 3], 1);
    b.tap('stem_relu', y);
    const cfg: Array<[number, number]> = [[16, 1], [32, 2], [64, 2]];
    cfg.forEach(([c, s], i) => {
      y = b.resBlock(`b${i + 1}`, y, c, s);
      b.tap(`b${i + 1}_relu2`, y);
    });
    y = tf.layers.averagePooling2d({ poolSize: [8, 8], name: 'avgpool' }).apply(y) as tf.SymbolicTensor;
    y = tf.layers.flatten({ name: 'flatten' }).apply(y) as tf.SymbolicTensor;
    logits = b.dense('fc', y, 10);
  } else if (name === 'dscnn') {
    inputShape = [10, 49, 1];
    input = tf.input({ shape: inputShape });
    let y = b.convBnRelu('stem', input, 64, [4, 10], 2);
    b.tap('stem_relu', y);
    for (let i = 1; i <= 4; i++) {
      y = b.dsBlock(`ds${i}`, y, 64, 1);
      b.tap(`ds${i}_pw_relu`, y);
    }
    y = tf.layers.averagePooling2d({ poolSize: [5, 25], name: 'avgpool' }).apply(y) as tf.SymbolicTensor;
    y = tf.layers.flatten({ name: 'flatten' }).apply(y) as tf.SymbolicTensor;
    logits = b.dense('fc', y, 12);
  } else if (name === 'mobilenetv1') {
    inputShape = [96, 96, 3];
    input = tf.input({ shape: inputShape });
    let y = b.convBnRelu('stem', input, 8, [3, 3], 2);
    b.tap('stem_relu', y);
    MOBILENET_BLOCKS.forEach(([c, s], i) => {
      y = b.dsBlock(`ds${i + 1}`, y, c, s);
      if ((i + 1) % 4 === 0) b.tap(`ds${i + 1}_pw_relu`, y);
    });
    y = tf.layers.averagePooling2d({ poolSize: [3, 3], name: 'avgpool' }).apply(y) as tf.SymbolicTensor;
    y = tf.layers.flatten({ name: 'flatten' }).apply(y) as tf.SymbolicTensor;
    logits = b.dense('fc', y, 2);
  } else {
    inputShape = [128, 9];
    input = tf.input({ shape: inputShape });
    let y = b.conv1d('conv1', input, 64, 3);
    y = b.bn('conv1_bn', y);
    y = b.relu('conv1_relu', y);
    b.tap('conv1_relu', y);
    y = b.conv1d('conv2', y, 64, 3);
    y = b.bn('conv2_bn', y);
    y = b.relu('conv2_relu', y);
    b.tap('conv2_relu', y);
    y = tf.layers.maxPooling1d({ poolSize: 2, strides: 2, name: 'maxpool' }).apply(y) as tf.SymbolicTensor;
    y = tf.layers.flatten({ name: 'flatten' }).apply(y) as tf.SymbolicTensor;
    y = b.dense('fc1', y, 128);
    y = b.relu('fc1_relu', y);
    logits = b.dense('fc2', y, 6);
  }

  const model = tf.model({ inputs: input, outputs: [logits, ...b.taps] });
  return { model, tapNames: b.tapNames, params: b.params, inputShape };
}

/** Natural input distribution per model, used for parity fixtures. */
export function sampleInputs(name: ModelName, n: number, rng: Prng): { dims: number[]; data: Float32Array } {
  const shapes: Record<ModelName, number[]> = {
    res8: [32, 32, 3],
    dscnn: [10, 49, 1],
    mobilenetv1: [96, 96, 3],
    har_cnn: [128, 9],
  };
  const shape = shapes[name];
  const elems = shape.reduce((a, b) => a * b, 1) * n;
  const data = name === 'res8' || name === 'mobilenetv1'
    ? rng.uniforms(elems, 0.0, 1.0)     // image-like
    : rng.normals(elems, 1.0);          // feature-like
  return { dims: [n, ...shape], data };
}

/**
 * Converter CLI:
 *   export-weights --model M --seed S --out F
 *   export-parity  --model M --seed S --samples N --out-dir D
 *   export-dataset --name D --split {train,test} --limit N --out F
 *                  [--source DIR | --seed S]
 */

import { DATASET_NAMES, DatasetName, exportDataset, writeDataset } from './datasets';
import { exportModelPair, exportWeights } from './export';
import { MODEL_NAMES, ModelName, buildModel } from './models';

function parseArgs(argv: string[]): Map<string, string> {
  const out = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    if (!argv[i].startsWith('--') || i + 1 >= argv.length) {
      throw new Error(`malformed arguments near ${argv[i]}`);
    }
    out.set(argv[i].slice(2), argv[i + 1]);
  }
  return out;
}

function need(args: Map<string, string>, key: string): string {
  const v = args.get(key);
  if (v === undefined) throw new Error(`missing required --${key}`);
  return v;
}

function asModel(v: string): ModelName {
  if (!MODEL_NAMES.includes(v as ModelName)) {
    throw new Error(`unknown model ${v}; choose from ${MODEL_NAMES.join(', ')}`);
  }
  return v as ModelName;
}

async function main(): Promise<number> {
  const [command, ...rest] = process.argv.slice(2);
  try {
    const args = parseArgs(rest);
    if (command === 'export-weights') {
      const model = asModel(need(args, 'model'));
      const seed = Number(args.get('seed') ?? '0');
      const built = buildModel(model, seed);
      exportWeights(built, need(args, 'out'));
      console.log(`wrote ${need(args, 'out')} (${built.params.size} tensors)`);
    } else if (command === 'export-parity') {
      const model = asModel(need(args, 'model'));
      const seed = Number(args.get('seed') ?? '0');
      const samples = Number(args.get('samples') ?? '8');
      const outDir = args.get('out-dir') ?? 'fixtures';
      const { weights, parity } = await exportModelPair(model, seed, samples, outDir);
      console.log(`wrote ${weights} and ${parity}`);
    } else if (command === 'export-dataset') {
      const name = need(args, 'name') as DatasetName;
      if (!DATASET_NAMES.includes(name)) {
        throw new Error(`unknown dataset ${name}; choose from ${DATASET_NAMES.join(', ')}`);
      }
      const split = (args.get('split') ?? 'test') as 'train' | 'test';
      const limit = Number(args.get('limit') ?? '1024');
      const ds = exportDataset(name, split, limit, {
        sourceDir: args.get('source'),
        syntheticSeed: Number(args.get('seed') ?? '0'),
      });
      writeDataset(ds, need(args, 'out'));
      console.log(`wrote ${need(args, 'out')} (${ds.dims[0]} samples)`);
    } else {
      console.error('usage: cli.js {export-weights|export-parity|export-dataset} ...');
      return 1;
    }
    return 0;
  } catch (err) {
    console.error(String(err instanceof Error ? err.message : err));
    return 1;
  }
}

main().then((code) => process.exit(code));

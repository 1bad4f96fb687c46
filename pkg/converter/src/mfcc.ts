/**
 * MFCC preprocessing for keyword spotting clips.
 *
 * Parameters are inherited from the keyword-spotting reference frontend
 * (the source paper does not restate them): 16 kHz mono clips padded or
 * truncated to 1 s, 40 ms Hann-windowed frames with 20 ms hop (49 frames),
 * 1024-point FFT, 40 mel filters spanning 20..4000 Hz, log energies,
 * orthonormal DCT-II, first 10 coefficients. Output layout is
 * [10 coefficients, 49 frames, 1] to match the model's declared input.
 */

export const SAMPLE_RATE = 16000;
export const CLIP_SAMPLES = 16000;
export const FRAME_LEN = 640; // 40 ms
export const FRAME_HOP = 320; // 20 ms
export const NUM_FRAMES = 49;
export const FFT_SIZE = 1024;
export const NUM_MEL = 40;
export const NUM_COEFFS = 10;
export const MEL_LOW_HZ = 20;
export const MEL_HIGH_HZ = 4000;

function hannWindow(n: number): Float64Array {
  const w = new Float64Array(n);
  for (let i = 0; i < n; i++) w[i] = 0.5 - 0.5 * Math.cos((2 * Math.PI * i) / (n - 1));
  return w;
}

/** In-place iterative radix-2 FFT over interleaved (re, im) arrays. */
function fft(re: Float64Array, im: Float64Array): void {
  const n = re.length;
  for (let i = 1, j = 0; i < n; i++) {
    let bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      [re[i], re[j]] = [re[j], re[i]];
      [im[i], im[j]] = [im[j], im[i]];
    }
  }
  for (let len = 2; len <= n; len <<= 1) {
    const ang = (-2 * Math.PI) / len;
    const wRe = Math.cos(ang);
    const wIm = Math.sin(ang);
    for (let i = 0; i < n; i += len) {
      let curRe = 1.0;
      let curIm = 0.0;
      for (let k = 0; k < len / 2; k++) {
        const uRe = re[i + k];
        const uIm = im[i + k];
        const vRe = re[i + k + len / 2] * curRe - im[i + k + len / 2] * curIm;
        const vIm = re[i + k + len / 2] * curIm + im[i + k + len / 2] * curRe;
        re[i + k] = uRe + vRe;
        im[i + k] = uIm + vIm;
        re[i + k + len / 2] = uRe - vRe;
        im[i + k + len / 2] = uIm - vIm;
        const nextRe = curRe * wRe - curIm * wIm;
        curIm = curRe * wIm + curIm * wRe;
        curRe = nextRe;
      }
    }
  }
}

function hzToMel(hz: number): number {
  return 2595 * Math.log10(1 + hz / 700);
}

function melToHz(mel: number): number {
  return 700 * (Math.pow(10, mel / 2595) - 1);
}

function melFilterbank(): Float64Array[] {
  const bins = FFT_SIZE / 2 + 1;
  const melLow = hzToMel(MEL_LOW_HZ);
  const melHigh = hzToMel(MEL_HIGH_HZ);
  const centers: number[] = [];
  for (let m = 0; m < NUM_MEL + 2; m++) {
    const mel = melLow + ((melHigh - melLow) * m) / (NUM_MEL + 1);
    centers.push((melToHz(mel) * FFT_SIZE) / SAMPLE_RATE);
  }
  const filters: Float64Array[] = [];
  for (let m = 1; m <= NUM_MEL; m++) {
    const f = new Float64Array(bins);
    const [lo, mid, hi] = [centers[m - 1], centers[m], centers[m + 1]];
    for (let k = Math.floor(lo); k <= Math.min(Math.ceil(hi), bins - 1); k++) {
      if (k < lo || k > hi) continue;
      f[k] = k <= mid ? (k - lo) / Math.max(mid - lo, 1e-9) : (hi - k) / Math.max(hi - mid, 1e-9);
      if (f[k] < 0) f[k] = 0;
    }
    filters.push(f);
  }
  return filters;
}

const WINDOW = hannWindow(FRAME_LEN);
const FILTERS = melFilterbank();

/** DCT-II (orthonormal) of a NUM_MEL-vector, first NUM_COEFFS outputs. */
function dct(logMel: Float64Array): Float64Array {
  const out = new Float64Array(NUM_COEFFS);
  for (let k = 0; k < NUM_COEFFS; k++) {
    let acc = 0;
    for (let n = 0; n < NUM_MEL; n++) {
      acc += logMel[n] * Math.cos((Math.PI * k * (2 * n + 1)) / (2 * NUM_MEL));
    }
    const scale = k === 0 ? Math.sqrt(1 / NUM_MEL) : Math.sqrt(2 / NUM_MEL);
    out[k] = acc * scale;
  }
  return out;
}

/**
 * Compute the [NUM_COEFFS, NUM_FRAMES, 1] MFCC feature map of one clip
 * (arbitrary-length mono PCM in [-1, 1]; padded/truncated to 1 s).
 */
export function mfcc(samples: Float32Array | Float64Array): Float32Array {
  const clip = new Float64Array(CLIP_SAMPLES);
  clip.set(samples.subarray(0, Math.min(samples.length, CLIP_SAMPLES)) as Float64Array);
  const out = new Float32Array(NUM_COEFFS * NUM_FRAMES);
  const re = new Float64Array(FFT_SIZE);
  const im = new Float64Array(FFT_SIZE);
  const power = new Float64Array(FFT_SIZE / 2 + 1);
  const logMel = new Float64Array(NUM_MEL);
  for (let t = 0; t < NUM_FRAMES; t++) {
    re.fill(0);
    im.fill(0);
    const start = t * FRAME_HOP;
    for (let i = 0; i < FRAME_LEN; i++) re[i] = clip[start + i] * WINDOW[i];
    fft(re, im);
    for (let k = 0; k <= FFT_SIZE / 2; k++) power[k] = re[k] * re[k] + im[k] * im[k];
    for (let m = 0; m < NUM_MEL; m++) {
      let acc = 0;
      const f = FILTERS[m];
      for (let k = 0; k < f.length; k++) acc += f[k] * power[k];
      logMel[m] = Math.log(Math.max(acc, 1e-12));
    }
    const coeffs = dct(logMel);
    for (let c = 0; c < NUM_COEFFS; c++) out[c * NUM_FRAMES + t] = coeffs[c];
  }
  return out; // row-major [NUM_COEFFS, NUM_FRAMES, 1]
}

/** Minimal mono 16-bit PCM WAV reader. */
export function readWav(buf: Buffer): { rate: number; samples: Float32Array } {
  if (buf.toString('ascii', 0, 4) !== 'RIFF' || buf.toString('ascii', 8, 12) !== 'WAVE') {
    throw new Error('not a RIFF/WAVE file');
  }
  let off = 12;
  let rate = 0;
  let channels = 1;
  let bits = 16;
  let data: Buffer | null = null;
  while (off + 8 <= buf.length) {
    const id = buf.toString('ascii', off, off + 4);
    const size = buf.readUInt32LE(off + 4);
    if (id === 'fmt ') {
      channels = buf.readUInt16LE(off + 10);
      rate = buf.readUInt32LE(off + 12);
      bits = buf.readUInt16LE(off + 22);
    } else if (id === 'data') {
      data = buf.subarray(off + 8, off + 8 + size);
    }
    off += 8 + size + (size % 2);
  }
  if (!data) throw new Error('missing data chunk');
  if (bits !== 16) throw new Error(`expected 16-bit PCM, got ${bits}`);
  const n = Math.floor(data.length / 2 / channels);
  const samples = new Float32Array(n);
  for (let i = 0; i < n; i++) samples[i] = data.readInt16LE(i * 2 * channels) / 32768;
  return { rate, samples };
}

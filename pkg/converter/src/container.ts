/**
 * TQT1 binary tensor container (little-endian), mirroring the engine's
 * on-disk format:
 *   magic "TQT1" | version u16 | count u32
 *   per entry: name_len u16, name utf-8, dtype u8 (0=f32,1=i32,2=u8),
 *              rank u8, dims u32*rank, payload row-major
 */

const MAGIC = 'TQT1';
const VERSION = 1;

export type EntryData = Float32Array | Int32Array | Uint8Array;

export interface Entry {
  dims: number[];
  data: EntryData;
}

function dtypeCode(data: EntryData): number {
  if (data instanceof Float32Array) return 0;
  if (data instanceof Int32Array) return 1;
  return 2;
}

function dtypeSize(code: number): number {
  return code === 2 ? 1 : 4;
}

export function serialize(entries: Map<string, Entry>): Buffer {
  const parts: Buffer[] = [];
  const head = Buffer.alloc(10);
  head.write(MAGIC, 0, 'ascii');
  head.writeUInt16LE(VERSION, 4);
  head.writeUInt32LE(entries.size, 6);
  parts.push(head);
  for (const [name, entry] of entries) {
    const rawName = Buffer.from(name, 'utf-8');
    const header = Buffer.alloc(2 + rawName.length + 2 + 4 * entry.dims.length);
    let off = 0;
    header.writeUInt16LE(rawName.length, off); off += 2;
    rawName.copy(header, off); off += rawName.length;
    header.writeUInt8(dtypeCode(entry.data), off); off += 1;
    header.writeUInt8(entry.dims.length, off); off += 1;
    for (const d of entry.dims) {
      header.writeUInt32LE(d, off); off += 4;
    }
    const elems = entry.dims.reduce((a, b) => a * b, 1);
    if (elems !== entry.data.length) {
      throw new Error(`entry ${name}: dims ${entry.dims} do not match ${entry.data.length} values`);
    }
    parts.push(header);
    parts.push(Buffer.from(entry.data.buffer, entry.data.byteOffset, entry.data.byteLength));
  }
  return Buffer.concat(parts);
}

export function deserialize(blob: Buffer): Map<string, Entry> {
  if (blob.length < 10 || blob.toString('ascii', 0, 4) !== MAGIC) {
    throw new Error('byte 0: bad magic');
  }
  const version = blob.readUInt16LE(4);
  if (version !== VERSION) throw new Error(`byte 4: unsupported version ${version}`);
  const count = blob.readUInt32LE(6);
  let off = 10;
  const out = new Map<string, Entry>();
  for (let i = 0; i < count; i++) {
    const nameLen = blob.readUInt16LE(off); off += 2;
    const name = blob.toString('utf-8', off, off + nameLen); off += nameLen;
    const code = blob.readUInt8(off); off += 1;
    const rank = blob.readUInt8(off); off += 1;
    const dims: number[] = [];
    for (let r = 0; r < rank; r++) {
      dims.push(blob.readUInt32LE(off)); off += 4;
    }
    const elems = dims.reduce((a, b) => a * b, 1);
    const nbytes = elems * dtypeSize(code);
    if (off + nbytes > blob.length) throw new Error(`byte ${off}: truncated payload for ${name}`);
    const slice = blob.subarray(off, off + nbytes);
    // copy so the typed array is aligned and detached from the file buffer
    const bytes = new Uint8Array(slice.length);
    bytes.set(slice);
    let data: EntryData;
    if (code === 0) data = new Float32Array(bytes.buffer);
    else if (code === 1) data = new Int32Array(bytes.buffer);
    else if (code === 2) data = bytes;
    else throw new Error(`byte ${off - 2 - 4 * rank}: unknown dtype code ${code}`);
    off += nbytes;
    if (out.has(name)) throw new Error(`byte ${off}: duplicate entry ${name}`);
    out.set(name, { dims, data });
  }
  if (off !== blob.length) throw new Error(`byte ${off}: trailing bytes`);
  return out;
}

export function f32(dims: number[], data: ArrayLike<number>): Entry {
  return { dims, data: Float32Array.from(data as number[]) };
}

export function i32(dims: number[], data: ArrayLike<number>): Entry {
  return { dims, data: Int32Array.from(data as number[]) };
}

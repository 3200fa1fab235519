"""Baseline JPEG (JFIF) encoder/decoder with caller-supplied quantization tables.

Only what camera pipelines need: 8-bit baseline sequential, 4:2:0 chroma
subsampling, standard Huffman tables, no restart markers. The decoder parses
the bitstream independently of the encoder state, which lets tests verify
entropy coding at the quantized-coefficient level.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn

from .imageops import ParameterError

# Marker bytes (second byte after 0xFF).
SOI, EOI, SOS, DQT, DHT, SOF0, APP0, COM, DRI = (
    0xD8, 0xD9, 0xDA, 0xDB, 0xC4, 0xC0, 0xE0, 0xFE, 0xDD,
)

# Standard Huffman table specs: (counts per code length 1..16, symbols).
DC_LUMA_BITS = [0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0]
DC_LUMA_VALS = list(range(12))
DC_CHROMA_BITS = [0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0]
DC_CHROMA_VALS = list(range(12))
AC_LUMA_BITS = [0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 125]
AC_LUMA_VALS = [
    0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06,
    0x13, 0x51, 0x61, 0x07, 0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xA1, 0x08,
    0x23, 0x42, 0xB1, 0xC1, 0x15, 0x52, 0xD1, 0xF0, 0x24, 0x33, 0x62, 0x72,
    0x82, 0x09, 0x0A, 0x16, 0x17, 0x18, 0x19, 0x1A, 0x25, 0x26, 0x27, 0x28,
    0x29, 0x2A, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3A, 0x43, 0x44, 0x45,
    0x46, 0x47, 0x48, 0x49, 0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59,
    0x5A, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69, 0x6A, 0x73, 0x74, 0x75,
    0x76, 0x77, 0x78, 0x79, 0x7A, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89,
    0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9A, 0xA2, 0xA3,
    0xA4, 0xA5, 0xA6, 0xA7, 0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4, 0xB5, 0xB6,
    0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3, 0xC4, 0xC5, 0xC6, 0xC7, 0xC8, 0xC9,
    0xCA, 0xD2, 0xD3, 0xD4, 0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA, 0xE1, 0xE2,
    0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8, 0xE9, 0xEA, 0xF1, 0xF2, 0xF3, 0xF4,
    0xF5, 0xF6, 0xF7, 0xF8, 0xF9, 0xFA,
]
AC_CHROMA_BITS = [0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 119]
AC_CHROMA_VALS = [
    0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41,
    0x51, 0x07, 0x61, 0x71, 0x13, 0x22, 0x32, 0x81, 0x08, 0x14, 0x42, 0x91,
    0xA1, 0xB1, 0xC1, 0x09, 0x23, 0x33, 0x52, 0xF0, 0x15, 0x62, 0x72, 0xD1,
    0x0A, 0x16, 0x24, 0x34, 0xE1, 0x25, 0xF1, 0x17, 0x18, 0x19, 0x1A, 0x26,
    0x27, 0x28, 0x29, 0x2A, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3A, 0x43, 0x44,
    0x45, 0x46, 0x47, 0x48, 0x49, 0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58,
    0x59, 0x5A, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69, 0x6A, 0x73, 0x74,
    0x75, 0x76, 0x77, 0x78, 0x79, 0x7A, 0x82, 0x83, 0x84, 0x85, 0x86, 0x87,
    0x88, 0x89, 0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9A,
    0xA2, 0xA3, 0xA4, 0xA5, 0xA6, 0xA7, 0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4,
    0xB5, 0xB6, 0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3, 0xC4, 0xC5, 0xC6, 0xC7,
    0xC8, 0xC9, 0xCA, 0xD2, 0xD3, 0xD4, 0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA,
    0xE2, 0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8, 0xE9, 0xEA, 0xF2, 0xF3, 0xF4,
    0xF5, 0xF6, 0xF7, 0xF8, 0xF9, 0xFA,
]


def zigzag_order() -> np.ndarray:
    """Indices that map a raster-ordered flat 8x8 block to zigzag order."""
    order = sorted(
        ((r, c) for r in range(8) for c in range(8)),
        key=lambda rc: (rc[0] + rc[1], rc[0] if (rc[0] + rc[1]) % 2 else rc[1]),
    )
    return np.array([r * 8 + c for r, c in order])

ZIGZAG = zigzag_order()
UNZIGZAG = np.argsort(ZIGZAG)


def _check_quant(table: np.ndarray, name: str) -> np.ndarray:
    q = np.asarray(table, dtype=np.int64)
    if q.shape != (8, 8):
        raise ParameterError(f"{name} must be 8x8, got {q.shape}")
    if q.min() < 1 or q.max() > 255:
        raise ParameterError(f"{name} entries must lie in 1..255")
    return q


def _build_canonical_codes(bits, values):
    """T.81 canonical Huffman codes: {symbol: (code, length)}."""
    codes = {}
    code = 0
    k = 0
    for length in range(1, 17):
        for _ in range(bits[length - 1]):
            codes[values[k]] = (code, length)
            code += 1
            k += 1
        code <<= 1
    return codes


class _BitWriter:
    def __init__(self):
        self.buf = bytearray()
        self.acc = 0
        self.nbits = 0

    def write(self, code: int, length: int):
        self.acc = (self.acc << length) | (code & ((1 << length) - 1))
        self.nbits += length
        while self.nbits >= 8:
            self.nbits -= 8
            self.buf.append((self.acc >> self.nbits) & 0xFF)

    def flush(self) -> bytes:
        if self.nbits:
            self.write(0xFF, 8 - self.nbits)  # pad with 1-bits
        return bytes(self.buf)


class _BitReader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.acc = 0
        self.nbits = 0

    def read_bit(self) -> int:
        if self.nbits == 0:
            if self.pos >= len(self.data):
                raise ValueError("unexpected end of entropy-coded data")
            self.acc = self.data[self.pos]
            self.pos += 1
            self.nbits = 8
        self.nbits -= 1
        return (self.acc >> self.nbits) & 1

    def read_bits(self, n: int) -> int:
        v = 0
        for _ in range(n):
            v = (v << 1) | self.read_bit()
        return v


def _rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128.0 - 0.168735892 * r - 0.331264108 * g + 0.5 * b
    cr = 128.0 + 0.5 * r - 0.418687589 * g - 0.081312411 * b
    return np.stack([y, cb, cr], axis=-1)


def _ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = ycc[..., 0], ycc[..., 1] - 128.0, ycc[..., 2] - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136286 * cb - 0.714136286 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b], axis=-1)


def _to_blocks(plane: np.ndarray) -> np.ndarray:
    """(H, W) -> (H/8, W/8, 8, 8); H, W must be multiples of 8."""
    h, w = plane.shape
    return plane.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)


def _from_blocks(blocks: np.ndarray) -> np.ndarray:
    nby, nbx = blocks.shape[:2]
    return blocks.transpose(0, 2, 1, 3).reshape(nby * 8, nbx * 8)


def quantized_coefficients(plane: np.ndarray, quant: np.ndarray) -> np.ndarray:
    """Forward DCT + quantization for one padded component plane.

    Returns int32 blocks of shape (H/8, W/8, 8, 8); this is the encoder's
    ground truth that the bitstream must carry losslessly.
    """
    blocks = _to_blocks(plane.astype(np.float64) - 128.0)
    coefs = dctn(blocks, axes=(-2, -1), norm="ortho")
    return np.rint(coefs / quant).astype(np.int32)


def _pad_to_multiple(plane: np.ndarray, mult: int) -> np.ndarray:
    h, w = plane.shape
    ph = (-h) % mult
    pw = (-w) % mult
    if ph or pw:
        plane = np.pad(plane, ((0, ph), (0, pw)), mode="edge")
    return plane


def _component_planes(rgb: np.ndarray):
    """Split into padded Y (16-aligned) and 4:2:0 subsampled Cb, Cr planes."""
    ycc = _rgb_to_ycbcr(rgb.astype(np.float64))
    y = _pad_to_multiple(ycc[..., 0], 16)
    h2, w2 = y.shape[0] // 2, y.shape[1] // 2
    chroma = []
    for c in range(1, 3):
        plane = _pad_to_multiple(ycc[..., c], 2)
        sub = plane.reshape(plane.shape[0] // 2, 2, plane.shape[1] // 2, 2).mean(axis=(1, 3))
        chroma.append(_pad_to_multiple(sub, 8)[:h2, :w2])
    return y, chroma[0], chroma[1]


def _bit_category(v: int) -> int:
    return int(v).bit_length() if v > 0 else int(-v).bit_length()


def _amplitude_bits(v: int, size: int) -> int:
    return v if v >= 0 else v + (1 << size) - 1


def _encode_block(writer, zz, prev_dc, dc_codes, ac_codes) -> int:
    dc = int(zz[0])
    diff = dc - prev_dc
    size = _bit_category(diff)
    code, length = dc_codes[size]
    writer.write(code, length)
    if size:
        writer.write(_amplitude_bits(diff, size), size)
    run = 0
    last_nonzero = int(np.max(np.nonzero(zz)[0])) if np.any(zz[1:]) else 0
    for k in range(1, last_nonzero + 1):
        v = int(zz[k])
        if v == 0:
            run += 1
            continue
        while run > 15:
            code, length = ac_codes[0xF0]
            writer.write(code, length)
            run -= 16
        size = _bit_category(v)
        code, length = ac_codes[(run << 4) | size]
        writer.write(code, length)
        writer.write(_amplitude_bits(v, size), size)
        run = 0
    if last_nonzero < 63:
        code, length = ac_codes[0x00]
        writer.write(code, length)
    return dc


def encode(rgb: np.ndarray, quant_luma: np.ndarray, quant_chroma: np.ndarray) -> bytes:
    """Encode an (H, W, 3) uint8 RGB image to baseline JFIF bytes."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ParameterError(f"expected (H, W, 3) image, got {rgb.shape}")
    ql = _check_quant(quant_luma, "quant_luma")
    qc = _check_quant(quant_chroma, "quant_chroma")
    h, w = rgb.shape[:2]

    y, cb, cr = _component_planes(rgb)
    coefs = [
        quantized_coefficients(y, ql),
        quantized_coefficients(cb, qc),
        quantized_coefficients(cr, qc),
    ]

    out = bytearray()
    out += bytes([0xFF, SOI])
    out += bytes([0xFF, APP0]) + struct.pack(
        ">H", 16) + b"JFIF\x00" + bytes([1, 1, 0]) + struct.pack(">HH", 1, 1) + bytes([0, 0])
    for tid, q in ((0, ql), (1, qc)):
        out += bytes([0xFF, DQT]) + struct.pack(">H", 67) + bytes([tid])
        out += bytes(q.reshape(64)[ZIGZAG].astype(np.uint8))
    out += bytes([0xFF, SOF0]) + struct.pack(">HBHHB", 17, 8, h, w, 3)
    out += bytes([1, 0x22, 0]) + bytes([2, 0x11, 1]) + bytes([3, 0x11, 1])
    for cls, tid, bits, vals in (
        (0, 0, DC_LUMA_BITS, DC_LUMA_VALS),
        (1, 0, AC_LUMA_BITS, AC_LUMA_VALS),
        (0, 1, DC_CHROMA_BITS, DC_CHROMA_VALS),
        (1, 1, AC_CHROMA_BITS, AC_CHROMA_VALS),
    ):
        out += bytes([0xFF, DHT]) + struct.pack(">H", 19 + len(vals))
        out += bytes([(cls << 4) | tid]) + bytes(bits) + bytes(vals)
    out += bytes([0xFF, SOS]) + struct.pack(">H", 12) + bytes(
        [3, 1, 0x00, 2, 0x11, 3, 0x11, 0, 63, 0])

    dc_l = _build_canonical_codes(DC_LUMA_BITS, DC_LUMA_VALS)
    ac_l = _build_canonical_codes(AC_LUMA_BITS, AC_LUMA_VALS)
    dc_c = _build_canonical_codes(DC_CHROMA_BITS, DC_CHROMA_VALS)
    ac_c = _build_canonical_codes(AC_CHROMA_BITS, AC_CHROMA_VALS)

    writer = _BitWriter()
    zz = [c.reshape(c.shape[0], c.shape[1], 64)[..., ZIGZAG] for c in coefs]
    mcus_y = y.shape[0] // 16
    mcus_x = y.shape[1] // 16
    prev = [0, 0, 0]
    for my in range(mcus_y):
        for mx in range(mcus_x):
            for dy in range(2):
                for dx in range(2):
                    prev[0] = _encode_block(
                        writer, zz[0][2 * my + dy, 2 * mx + dx], prev[0], dc_l, ac_l)
            prev[1] = _encode_block(writer, zz[1][my, mx], prev[1], dc_c, ac_c)
            prev[2] = _encode_block(writer, zz[2][my, mx], prev[2], dc_c, ac_c)

    out += writer.flush().replace(b"\xff", b"\xff\x00")
    out += bytes([0xFF, EOI])
    return bytes(out)


@dataclass
class DecodedScan:
    """Quantized coefficients and tables recovered from a JFIF bitstream."""
    height: int
    width: int
    coefficients: list        # per component: (nby, nbx, 8, 8) int32
    quant_tables: list        # per component: (8, 8) int
    sampling: list            # per component: (h, v)


def _parse_segments(data: bytes):
    if data[:2] != bytes([0xFF, SOI]):
        raise ValueError("not a JPEG stream (missing SOI)")
    pos = 2
    while pos < len(data):
        if data[pos] != 0xFF:
            raise ValueError(f"expected marker at byte {pos}")
        marker = data[pos + 1]
        pos += 2
        if marker == EOI:
            return
        if marker in (SOI,) or 0xD0 <= marker <= 0xD7:
            continue
        (length,) = struct.unpack(">H", data[pos:pos + 2])
        payload = data[pos + 2:pos + length]
        pos += length
        if marker == SOS:
            end = pos
            while True:
                end = data.index(b"\xff", end)
                if data[end + 1] not in (0x00,) and not (0xD0 <= data[end + 1] <= 0xD7):
                    break
                end += 2
            yield marker, payload, data[pos:end]
            pos = end
        else:
            yield marker, payload, b""


def _decode_huffman_symbol(reader, lut):
    code = 0
    for length in range(1, 17):
        code = (code << 1) | reader.read_bit()
        sym = lut.get((length, code))
        if sym is not None:
            return sym
    raise ValueError("invalid Huffman code in scan")


def _extend(v: int, size: int) -> int:
    return v if v >= (1 << (size - 1)) else v - (1 << size) + 1


def decode_coefficients(data: bytes) -> DecodedScan:
    """Parse a baseline JFIF stream back to quantized DCT coefficients."""
    quant = {}
    huff = {}
    frame = None
    scan = None
    for marker, payload, entropy in _parse_segments(data):
        if marker == DQT:
            p = 0
            while p < len(payload):
                pq, tq = payload[p] >> 4, payload[p] & 0xF
                if pq != 0:
                    raise ValueError("16-bit quant tables unsupported")
                vals = np.frombuffer(payload[p + 1:p + 65], dtype=np.uint8)
                quant[tq] = vals[UNZIGZAG].reshape(8, 8).astype(np.int64)
                p += 65
        elif marker == DHT:
            p = 0
            while p < len(payload):
                cls, tid = payload[p] >> 4, payload[p] & 0xF
                bits = list(payload[p + 1:p + 17])
                nvals = sum(bits)
                vals = list(payload[p + 17:p + 17 + nvals])
                codes = _build_canonical_codes(bits, vals)
                huff[(cls, tid)] = {(ln, code): sym for sym, (code, ln) in codes.items()}
                p += 17 + nvals
        elif marker == SOF0:
            precision, h, w, ncomp = struct.unpack(">BHHB", payload[:6])
            comps = []
            for i in range(ncomp):
                cid, hv, tq = payload[6 + 3 * i:9 + 3 * i]
                comps.append((cid, hv >> 4, hv & 0xF, tq))
            frame = (h, w, comps)
        elif marker in (0xC1, 0xC2, 0xC3, 0xC5, 0xC6, 0xC7, 0xC9, 0xCA, 0xCB):
            raise ValueError("only baseline sequential JPEG is supported")
        elif marker == SOS:
            ncomp = payload[0]
            scan_comps = []
            for i in range(ncomp):
                cid, tabs = payload[1 + 2 * i:3 + 2 * i]
                scan_comps.append((cid, tabs >> 4, tabs & 0xF))
            scan = (scan_comps, entropy)
    if frame is None or scan is None:
        raise ValueError("missing SOF0 or SOS segment")

    h, w, comps = frame
    scan_comps, entropy = scan
    hmax = max(c[1] for c in comps)
    vmax = max(c[2] for c in comps)
    mcus_x = -(-w // (8 * hmax))
    mcus_y = -(-h // (8 * vmax))

    blocks = []
    for cid, ch, cv, tq in comps:
        blocks.append(np.zeros((mcus_y * cv, mcus_x * ch, 8, 8), dtype=np.int32))

    reader = _BitReader(entropy.replace(b"\xff\x00", b"\xff"))
    prev = [0] * len(comps)
    comp_tabs = {cid: (dc, ac) for cid, dc, ac in scan_comps}
    for my in range(mcus_y):
        for mx in range(mcus_x):
            for ci, (cid, ch, cv, tq) in enumerate(comps):
                dc_lut = huff[(0, comp_tabs[cid][0])]
                ac_lut = huff[(1, comp_tabs[cid][1])]
                for dy in range(cv):
                    for dx in range(ch):
                        zz = np.zeros(64, dtype=np.int32)
                        size = _decode_huffman_symbol(reader, dc_lut)
                        diff = _extend(reader.read_bits(size), size) if size else 0
                        prev[ci] += diff
                        zz[0] = prev[ci]
                        k = 1
                        while k < 64:
                            sym = _decode_huffman_symbol(reader, ac_lut)
                            if sym == 0x00:
                                break
                            run, size = sym >> 4, sym & 0xF
                            if sym == 0xF0:
                                k += 16
                                continue
                            k += run
                            zz[k] = _extend(reader.read_bits(size), size)
                            k += 1
                        blocks[ci][cv * my + dy, ch * mx + dx] = zz[UNZIGZAG].reshape(8, 8)
    return DecodedScan(
        height=h,
        width=w,
        coefficients=blocks,
        quant_tables=[quant[tq] for _, _, _, tq in comps],
        sampling=[(ch, cv) for _, ch, cv, _ in comps],
    )


def decode(data: bytes) -> np.ndarray:
    """Decode baseline JFIF bytes to an (H, W, 3) uint8 RGB image."""
    scan = decode_coefficients(data)
    hmax = max(s[0] for s in scan.sampling)
    vmax = max(s[1] for s in scan.sampling)
    planes = []
    for blocks, quant, (ch, cv) in zip(scan.coefficients, scan.quant_tables, scan.sampling):
        coefs = blocks.astype(np.float64) * quant
        plane = _from_blocks(idctn(coefs, axes=(-2, -1), norm="ortho")) + 128.0
        plane = np.repeat(np.repeat(plane, vmax // cv, axis=0), hmax // ch, axis=1)
        planes.append(plane[:scan.height, :scan.width])
    ycc = np.stack(planes, axis=-1)
    rgb = _ycbcr_to_rgb(ycc)
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def jpeg_roundtrip(x: np.ndarray, quant_luma: np.ndarray, quant_chroma: np.ndarray) -> np.ndarray:
    """Compress and decompress a signed-range image with the given tables."""
    from . import imageops

    raw = imageops.to_unsigned_range(x)
    return imageops.to_signed_range(decode(encode(raw, quant_luma, quant_chroma)))

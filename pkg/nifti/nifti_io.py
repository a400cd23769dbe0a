# coding=utf-8
"""
NIfTI-1 读写

解析 348 字节头（字节序通过 sizeof_hdr == 348 自动识别），按 sform > qform > pixdim
的优先级解析体素到物理坐标的仿射，读写体素数据。支持 .nii / .nii.gz 单文件以及
.hdr/.img 成对文件。扩展块读取时跳过，写出时 4 字节扩展标志全部为 0。
"""

from __future__ import annotations

import gzip
import math
import zlib
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from nibabel.quaternions import mat2quat, quat2mat
from structlog import get_logger

from core.errors import (
    BadEndianness,
    BadMagic,
    DimsOverflow,
    InvalidHeader,
    InvalidLabels,
    IoFailure,
    TruncatedData,
    UnsupportedDatatype,
)
from geom.affine import Affine4
from geom.models import IntensityVolume, LabelVolume, VoxelGrid

logger = get_logger()

HEADER_SIZE = 348
# 单文件：头 + 4 字节扩展标志之后才是体素数据
SINGLE_FILE_OFFSET = 352
MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIR = b"ni1\x00"
GZIP_MAGIC = b"\x1f\x8b"
# dim[] 是 int16
MAX_DIM = 32767

# NIfTI-1 头定义，注释中的数字为字节偏移
header_dtd = [
    ('sizeof_hdr', 'i4'),      # 0; must be 348
    ('data_type', 'S10'),      # 4; unused
    ('db_name', 'S18'),        # 14; unused
    ('extents', 'i4'),         # 32; unused
    ('session_error', 'i2'),   # 36; unused
    ('regular', 'S1'),         # 38; unused
    ('dim_info', 'u1'),        # 39
    ('dim', 'i2', (8,)),       # 40; data array dimensions
    ('intent_p1', 'f4'),       # 56
    ('intent_p2', 'f4'),       # 60
    ('intent_p3', 'f4'),       # 64
    ('intent_code', 'i2'),     # 68
    ('datatype', 'i2'),        # 70
    ('bitpix', 'i2'),          # 72
    ('slice_start', 'i2'),     # 74
    ('pixdim', 'f4', (8,)),    # 76; pixdim[0] = qfac
    ('vox_offset', 'f4'),      # 108
    ('scl_slope', 'f4'),       # 112
    ('scl_inter', 'f4'),       # 116
    ('slice_end', 'i2'),       # 120
    ('slice_code', 'u1'),      # 122
    ('xyzt_units', 'u1'),      # 123
    ('cal_max', 'f4'),         # 124
    ('cal_min', 'f4'),         # 128
    ('slice_duration', 'f4'),  # 132
    ('toffset', 'f4'),         # 136
    ('glmax', 'i4'),           # 140
    ('glmin', 'i4'),           # 144
    ('descrip', 'S80'),        # 148
    ('aux_file', 'S24'),       # 228
    ('qform_code', 'i2'),      # 252
    ('sform_code', 'i2'),      # 254
    ('quatern_b', 'f4'),       # 256
    ('quatern_c', 'f4'),       # 260
    ('quatern_d', 'f4'),       # 264
    ('qoffset_x', 'f4'),       # 268
    ('qoffset_y', 'f4'),       # 272
    ('qoffset_z', 'f4'),       # 276
    ('srow_x', 'f4', (4,)),    # 280
    ('srow_y', 'f4', (4,)),    # 296
    ('srow_z', 'f4', (4,)),    # 312
    ('intent_name', 'S16'),    # 328
    ('magic', 'S4'),           # 344
]
header_dtype = np.dtype(header_dtd)

# 支持的数据类型：code -> numpy dtype
SUPPORTED_DATATYPES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
}
DTYPE_TO_CODE = {dt: code for code, dt in SUPPORTED_DATATYPES.items()}


class LabelLayout(str, Enum):
    """标签文件布局"""

    CHALLENGE = "challenge"  # 1 LV 腔, 2 LV 心肌, 3 RV
    INTERNAL = "internal"    # 1 LV（腔 + 心肌）, 2 RV


# challenge 布局 -> 内部标签；写回时心肌无法恢复，统一写成 1
_CHALLENGE_TO_INTERNAL = np.array([0, 1, 1, 2], dtype=np.uint8)
_INTERNAL_TO_CHALLENGE = np.array([0, 1, 3], dtype=np.uint8)


@dataclass
class NiftiHeader:
    """NIfTI-1 头中本项目用到的字段"""

    dim: Tuple[int, ...] = (3, 1, 1, 1, 1, 1, 1, 1)
    datatype: int = 2
    bitpix: int = 8
    pixdim: Tuple[float, ...] = (1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    vox_offset: float = float(SINGLE_FILE_OFFSET)
    scl_slope: float = 1.0
    scl_inter: float = 0.0
    xyzt_units: int = 2  # mm
    descrip: bytes = b""
    qform_code: int = 0
    sform_code: int = 0
    quatern_b: float = 0.0
    quatern_c: float = 0.0
    quatern_d: float = 0.0
    qoffset_x: float = 0.0
    qoffset_y: float = 0.0
    qoffset_z: float = 0.0
    srow_x: Tuple[float, ...] = (1.0, 0.0, 0.0, 0.0)
    srow_y: Tuple[float, ...] = (0.0, 1.0, 0.0, 0.0)
    srow_z: Tuple[float, ...] = (0.0, 0.0, 1.0, 0.0)
    magic: bytes = MAGIC_SINGLE
    sizeof_hdr: int = HEADER_SIZE
    endianness: str = field(default="<")  # '<' 小端, '>' 大端

    @property
    def qfac(self) -> float:
        # pixdim[0] 为 0 时按 +1 处理
        return -1.0 if self.pixdim[0] < 0 else 1.0

    @property
    def ndim(self) -> int:
        return int(self.dim[0])

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(int(d) for d in self.dim[1:self.ndim + 1])

    @property
    def dtype(self) -> np.dtype:
        return SUPPORTED_DATATYPES[self.datatype]

    @property
    def is_pair(self) -> bool:
        return self.magic == MAGIC_PAIR

    @classmethod
    def from_bytes(cls, raw: bytes) -> "NiftiHeader":
        if len(raw) < HEADER_SIZE:
            raise TruncatedData(f"文件长度 {len(raw)} 小于 NIfTI-1 头长度 {HEADER_SIZE}")

        if int.from_bytes(raw[:4], "little") == HEADER_SIZE:
            endianness = "<"
        elif int.from_bytes(raw[:4], "big") == HEADER_SIZE:
            endianness = ">"
        else:
            raise BadEndianness("sizeof_hdr 在两种字节序下都不等于 348")

        magic = bytes(raw[344:348])
        if magic not in (MAGIC_SINGLE, MAGIC_PAIR):
            raise BadMagic(f"magic 字段非法: {magic!r}")

        rec = np.frombuffer(raw[:HEADER_SIZE], dtype=header_dtype.newbyteorder(endianness))[0]
        header = cls(
            dim=tuple(int(v) for v in rec["dim"]),
            datatype=int(rec["datatype"]),
            bitpix=int(rec["bitpix"]),
            pixdim=tuple(float(v) for v in rec["pixdim"]),
            vox_offset=float(rec["vox_offset"]),
            scl_slope=float(rec["scl_slope"]),
            scl_inter=float(rec["scl_inter"]),
            xyzt_units=int(rec["xyzt_units"]),
            descrip=bytes(rec["descrip"]),
            qform_code=int(rec["qform_code"]),
            sform_code=int(rec["sform_code"]),
            quatern_b=float(rec["quatern_b"]),
            quatern_c=float(rec["quatern_c"]),
            quatern_d=float(rec["quatern_d"]),
            qoffset_x=float(rec["qoffset_x"]),
            qoffset_y=float(rec["qoffset_y"]),
            qoffset_z=float(rec["qoffset_z"]),
            srow_x=tuple(float(v) for v in rec["srow_x"]),
            srow_y=tuple(float(v) for v in rec["srow_y"]),
            srow_z=tuple(float(v) for v in rec["srow_z"]),
            magic=magic,
            sizeof_hdr=HEADER_SIZE,
            endianness=endianness,
        )
        header.validate()
        return header

    def validate(self):
        if self.ndim not in (2, 3, 4):
            raise InvalidHeader(f"dim[0] 必须是 2、3 或 4，实际为 {self.ndim}")
        if any(d < 1 for d in self.shape):
            raise InvalidHeader(f"各维尺寸必须 >= 1: {self.shape}")
        if self.datatype not in SUPPORTED_DATATYPES:
            raise UnsupportedDatatype(f"不支持的 datatype: {self.datatype}")
        expected_bitpix = self.dtype.itemsize * 8
        if self.bitpix != expected_bitpix:
            raise InvalidHeader(f"bitpix={self.bitpix} 与 datatype={self.datatype} 不一致（应为 {expected_bitpix}）")
        if not self.is_pair and self.vox_offset < SINGLE_FILE_OFFSET:
            raise InvalidHeader(f"单文件格式的 vox_offset 必须 >= {SINGLE_FILE_OFFSET}，实际为 {self.vox_offset}")

    def to_bytes(self) -> bytes:
        rec = np.zeros((), dtype=header_dtype.newbyteorder(self.endianness))
        rec["sizeof_hdr"] = HEADER_SIZE
        rec["regular"] = b"r"
        rec["dim"] = self.dim
        rec["datatype"] = self.datatype
        rec["bitpix"] = self.bitpix
        rec["pixdim"] = self.pixdim
        rec["vox_offset"] = self.vox_offset
        rec["scl_slope"] = self.scl_slope
        rec["scl_inter"] = self.scl_inter
        rec["xyzt_units"] = self.xyzt_units
        rec["descrip"] = self.descrip[:80]
        rec["qform_code"] = self.qform_code
        rec["sform_code"] = self.sform_code
        rec["quatern_b"] = self.quatern_b
        rec["quatern_c"] = self.quatern_c
        rec["quatern_d"] = self.quatern_d
        rec["qoffset_x"] = self.qoffset_x
        rec["qoffset_y"] = self.qoffset_y
        rec["qoffset_z"] = self.qoffset_z
        rec["srow_x"] = self.srow_x
        rec["srow_y"] = self.srow_y
        rec["srow_z"] = self.srow_z
        rec["magic"] = self.magic
        return rec.tobytes()


def affine_source(h: NiftiHeader) -> str:
    if h.sform_code > 0:
        return "sform"
    if h.qform_code > 0:
        return "qform"
    return "fallback"


def resolve_affine(h: NiftiHeader) -> Affine4:
    """
    从头信息解析体素 -> 物理坐标仿射

    sform_code > 0 时直接使用 srow_x/y/z；否则 qform_code > 0 时由四元数、pixdim 和 qfac 构造；
    两者都没有时退化为 diag(pixdim[1..3])，并记录警告。
    """
    source = affine_source(h)
    if source == "sform":
        m = np.vstack([h.srow_x, h.srow_y, h.srow_z, [0.0, 0.0, 0.0, 1.0]])
        return Affine4(m)

    if source == "qform":
        b, c, d = h.quatern_b, h.quatern_c, h.quatern_d
        a = math.sqrt(max(0.0, 1.0 - (b * b + c * c + d * d)))
        rotation = quat2mat([a, b, c, d])
        zooms = np.array(h.pixdim[1:4], dtype=np.float64)
        zooms[2] *= h.qfac
        logger.warning("sform 缺失，使用 qform 构造仿射", qform_code=h.qform_code)
        return Affine4.from_matvec(rotation * zooms, (h.qoffset_x, h.qoffset_y, h.qoffset_z))

    logger.warning("sform/qform 均缺失，退化为 pixdim 对角仿射", pixdim=h.pixdim[1:4])
    return Affine4.from_matvec(np.diag(h.pixdim[1:4]))


def _read_bytes(path: Path) -> bytes:
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise IoFailure(f"读取文件失败 {path}: {e}") from e
    if raw[:2] == GZIP_MAGIC:
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError, zlib.error) as e:
            raise TruncatedData(f"gzip 解压失败 {path}: {e}") from e
    return raw


def _companion_image(path: Path) -> Path:
    """.hdr 对应的 .img（含 .gz 变体）"""
    name = path.name
    if name.endswith(".hdr.gz"):
        stem, candidates = name[:-7], (".img.gz", ".img")
    elif name.endswith(".hdr"):
        stem, candidates = name[:-4], (".img", ".img.gz")
    else:
        raise InvalidHeader(f"ni1 格式要求 .hdr 文件名: {path}")
    for ext in candidates:
        img_path = path.with_name(stem + ext)
        if img_path.exists():
            return img_path
    raise IoFailure(f"找不到 {path} 对应的 .img 数据文件")


def _decode(header: NiftiHeader, path: Path, raw: bytes) -> np.ndarray:
    if header.is_pair:
        source = _read_bytes(_companion_image(path))
    else:
        source = raw
    offset = int(header.vox_offset)
    shape = header.shape
    count = int(np.prod(shape))
    nbytes = count * header.dtype.itemsize
    if len(source) - offset < nbytes:
        raise TruncatedData(f"体素数据长度不足: 需要 {nbytes} 字节，实际 {max(0, len(source) - offset)} 字节")

    data = np.frombuffer(source, dtype=header.dtype.newbyteorder(header.endianness), count=count, offset=offset)
    # NIfTI 体素按 x 变化最快存储
    data = data.reshape(shape, order="F").astype(header.dtype.newbyteorder("="))
    if header.ndim == 2:
        data = data.reshape(shape + (1,))
    return data


def _to_internal_labels(data: np.ndarray, layout: LabelLayout, path: Path) -> np.ndarray:
    if data.dtype.kind == "f":
        if not np.all(np.isfinite(data)) or not np.all(data == np.round(data)):
            raise InvalidLabels(f"标签文件包含非整数值: {path}")
    values = data.astype(np.int64)
    vocab = (0, 1, 2, 3) if layout == LabelLayout.CHALLENGE else (0, 1, 2)
    if values.size and (values.min() < 0 or values.max() > vocab[-1]):
        bad = sorted(set(np.unique(values).tolist()) - set(vocab))
        raise InvalidLabels(f"标签取值 {bad} 不在 {layout.value} 布局 {vocab} 内: {path}")
    if layout == LabelLayout.CHALLENGE:
        return _CHALLENGE_TO_INTERNAL[values]
    return values.astype(np.uint8)


def _apply_scaling(header: NiftiHeader, data: np.ndarray) -> np.ndarray:
    slope, inter = header.scl_slope, header.scl_inter
    if slope in (0.0, 1.0) and inter == 0.0:
        return data
    if slope == 0.0:
        slope = 1.0
    return data.astype(np.float64) * slope + inter


def _load(path, kind: str, label_layout) -> Tuple[NiftiHeader, np.ndarray, VoxelGrid]:
    if kind not in ("label", "intensity"):
        raise ValueError(f"kind 必须是 label 或 intensity: {kind}")
    path = Path(path)
    raw = _read_bytes(path)
    header = NiftiHeader.from_bytes(raw)
    data = _decode(header, path, raw)
    grid = VoxelGrid(data.shape[:3], resolve_affine(header))
    return header, data, grid


def _make_volume(header, frame_data, grid, kind, layout, path):
    if kind == "label":
        return LabelVolume(grid, _to_internal_labels(frame_data, layout, path))
    return IntensityVolume(grid, _apply_scaling(header, frame_data))


def read_volume(
    path: Union[str, Path],
    kind: str = "intensity",
    frame: Optional[int] = None,
    label_layout: Union[LabelLayout, str] = LabelLayout.CHALLENGE,
) -> Tuple[NiftiHeader, Union[IntensityVolume, LabelVolume]]:
    """
    读取 NIfTI-1 文件

    Args:
        path: .nii / .nii.gz / .hdr 路径（是否 gzip 由文件头 0x1f 0x8b 判断）
        kind: "label" 返回 LabelVolume，"intensity" 返回 IntensityVolume
        frame: 4D 文件取第几帧；只有一帧时可省略
        label_layout: 标签文件布局，challenge 布局读入时映射为内部标签

    Returns:
        (NiftiHeader, 体数据)
    """
    layout = LabelLayout(label_layout)
    header, data, grid = _load(path, kind, layout)
    if data.ndim == 4:
        n_frames = data.shape[3]
        if frame is None:
            if n_frames != 1:
                raise InvalidHeader(f"4D 文件有 {n_frames} 帧，必须指定 frame: {path}")
            frame = 0
        if not 0 <= frame < n_frames:
            raise InvalidHeader(f"frame={frame} 超出范围 [0, {n_frames}): {path}")
        data = data[..., frame]
    return header, _make_volume(header, data, grid, kind, layout, Path(path))


def read_frames(
    path: Union[str, Path],
    kind: str = "intensity",
    label_layout: Union[LabelLayout, str] = LabelLayout.CHALLENGE,
) -> Tuple[NiftiHeader, List[Union[IntensityVolume, LabelVolume]]]:
    """按第 4 维拆分，返回全部帧（3D 文件返回单元素列表）"""
    layout = LabelLayout(label_layout)
    header, data, grid = _load(path, kind, layout)
    frames = [data[..., t] for t in range(data.shape[3])] if data.ndim == 4 else [data]
    return header, [_make_volume(header, f, grid, kind, layout, Path(path)) for f in frames]


def _qform_params(affine: Affine4):
    """
    3x3 部分各列正交时返回 (quatern_b, quatern_c, quatern_d, qfac)，否则返回 None
    """
    linear = affine.linear
    zooms = np.linalg.norm(linear, axis=0)
    if np.any(zooms == 0):
        return None
    rotation = linear / zooms
    if not np.allclose(rotation.T @ rotation, np.eye(3), atol=1e-6):
        return None
    qfac = 1.0
    if np.linalg.det(rotation) < 0:
        rotation[:, 2] *= -1
        qfac = -1.0
    quat = mat2quat(rotation)
    if quat[0] < 0:
        quat = -quat
    return float(quat[1]), float(quat[2]), float(quat[3]), qfac


def _is_lossless(values: np.ndarray, dtype: np.dtype) -> bool:
    """values 转成 dtype 后能否原样转回"""
    if np.can_cast(values.dtype, dtype, casting="safe"):
        return True
    with np.errstate(all="ignore"):
        back = values.astype(dtype).astype(values.dtype)
    return bool(np.array_equal(back, values))


def _target_dtype(volume, template: Optional[NiftiHeader], datatype: Optional[int]) -> int:
    if datatype is not None:
        code = int(datatype)
        if code not in SUPPORTED_DATATYPES:
            raise UnsupportedDatatype(f"不支持的 datatype: {code}")
        if isinstance(volume, IntensityVolume) and not _is_lossless(volume.data, SUPPORTED_DATATYPES[code]):
            raise UnsupportedDatatype(f"强度数据 {volume.data.dtype} 无法无损写成 datatype {code}")
        return code
    if isinstance(volume, LabelVolume):
        return 2

    # 模板 datatype 只在无损时沿用，其次保留数据自身类型
    candidates = []
    if template is not None:
        candidates.append(template.datatype)
    candidates.append(DTYPE_TO_CODE.get(np.dtype(volume.data.dtype)))
    candidates.append(64)
    for code in candidates:
        if code in SUPPORTED_DATATYPES and _is_lossless(volume.data, SUPPORTED_DATATYPES[code]):
            return code
    raise UnsupportedDatatype(f"强度数据 {volume.data.dtype} 没有可无损写出的 datatype")


def write_volume(
    path: Union[str, Path],
    template: Optional[NiftiHeader],
    volume: Union[IntensityVolume, LabelVolume],
    datatype: Optional[int] = None,
    label_layout: Union[LabelLayout, str] = LabelLayout.CHALLENGE,
) -> None:
    """
    写出 NIfTI-1 文件

    仿射写入 sform（sform_code=1）；3x3 部分各列正交时同时写 qform。
    路径以 .gz 结尾时 gzip 压缩（mtime=0，相同内容输出字节一致）；以 .hdr 结尾时写成对文件。

    Args:
        path: 输出路径
        template: 头模板（可为 None），保留其描述字段和字节序；强度体只在无损时沿用其 datatype
        volume: LabelVolume 或 IntensityVolume
        datatype: 显式指定 datatype code，优先级最高
        label_layout: 标签写出布局，challenge 布局下内部 RV(2) 写成 3
    """
    path = Path(path)
    dims = volume.grid.dims
    if any(d > MAX_DIM for d in dims):
        raise DimsOverflow(f"体数据尺寸 {dims} 超过 int16 上限 {MAX_DIM}")

    code = _target_dtype(volume, template, datatype)
    dtype = SUPPORTED_DATATYPES[code]
    endianness = template.endianness if template is not None else "<"

    if isinstance(volume, LabelVolume):
        values = volume.data
        if LabelLayout(label_layout) == LabelLayout.CHALLENGE:
            values = _INTERNAL_TO_CHALLENGE[values]
        payload_array = values.astype(dtype)
    else:
        payload_array = volume.data.astype(dtype)

    affine = volume.grid.affine
    spacing = volume.grid.spacing
    qform = _qform_params(affine)
    qfac = qform[3] if qform is not None else 1.0
    is_pair = path.name.endswith((".hdr", ".hdr.gz"))

    base = template if template is not None else NiftiHeader()
    header = replace(
        base,
        dim=(3, dims[0], dims[1], dims[2], 1, 1, 1, 1),
        datatype=code,
        bitpix=dtype.itemsize * 8,
        pixdim=(qfac, spacing[0], spacing[1], spacing[2], 1.0, 1.0, 1.0, 1.0),
        vox_offset=0.0 if is_pair else float(SINGLE_FILE_OFFSET),
        scl_slope=1.0,
        scl_inter=0.0,
        sform_code=1,
        srow_x=tuple(affine.m[0]),
        srow_y=tuple(affine.m[1]),
        srow_z=tuple(affine.m[2]),
        qform_code=1 if qform is not None else 0,
        quatern_b=qform[0] if qform is not None else 0.0,
        quatern_c=qform[1] if qform is not None else 0.0,
        quatern_d=qform[2] if qform is not None else 0.0,
        qoffset_x=float(affine.translation[0]),
        qoffset_y=float(affine.translation[1]),
        qoffset_z=float(affine.translation[2]),
        magic=MAGIC_PAIR if is_pair else MAGIC_SINGLE,
        endianness=endianness,
    )

    header_bytes = header.to_bytes() + b"\x00" * 4
    payload = payload_array.astype(dtype.newbyteorder(endianness)).tobytes(order="F")
    if is_pair:
        stem = path.name[: -len(".hdr.gz")] if path.name.endswith(".gz") else path.name[: -len(".hdr")]
        img_path = path.with_name(stem + (".img.gz" if path.name.endswith(".gz") else ".img"))
        _write_bytes(path, header_bytes)
        _write_bytes(img_path, payload)
    else:
        _write_bytes(path, header_bytes + payload)
    logger.debug("NIfTI 已写出", path=str(path), dims=dims, datatype=code)


def _write_bytes(path: Path, content: bytes) -> None:
    if path.name.endswith(".gz"):
        content = gzip.compress(content, mtime=0)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(content)
    except OSError as e:
        raise IoFailure(f"写文件失败 {path}: {e}") from e

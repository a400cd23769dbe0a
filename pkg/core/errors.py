# coding=utf-8
"""
异常定义

所有业务异常都继承 ViewBridgeError，并携带命令行退出码：
2 = 输入/解析错误，3 = 几何错误，4 = 内部错误。
同时继承对应的内置异常类型，库调用方可以直接按 ValueError / OSError 捕获。
"""


class ViewBridgeError(Exception):
    """项目异常基类"""

    exit_code: int = 4


# === 输入类错误（退出码 2） ===

class InputError(ViewBridgeError, ValueError):
    exit_code = 2


class NiftiError(InputError):
    """NIfTI 文件解析失败"""


class BadMagic(NiftiError):
    pass


class UnsupportedDatatype(NiftiError):
    pass


class TruncatedData(NiftiError):
    pass


class BadEndianness(NiftiError):
    pass


class InvalidHeader(NiftiError):
    pass


class InvalidLabels(NiftiError):
    """标签取值不在约定的标签表内"""


class ManifestError(InputError):
    pass


class DimsOverflow(InputError):
    """体数据尺寸超过 NIfTI-1 头中 int16 字段的上限"""


class IoFailure(ViewBridgeError, OSError):
    exit_code = 2


# === 几何类错误（退出码 3） ===

class GeometryError(ViewBridgeError, ValueError):
    exit_code = 3


class SingularAffine(GeometryError):
    pass


class NoOverlap(GeometryError):
    """LA 平面与 SA 体没有交集，迁移后的标签全为背景"""


class RoiOutOfBounds(GeometryError):
    pass


# === 计算接口的参数错误 ===

class ShapeMismatch(ViewBridgeError, ValueError):
    pass


class EmptyMask(ViewBridgeError, ValueError):
    """掩码为空，Hausdorff 距离无定义"""


class MissingPhase(ViewBridgeError, ValueError):
    pass


class TooFewPairs(ViewBridgeError, ValueError):
    pass


class EmptyInput(ViewBridgeError, ValueError):
    pass

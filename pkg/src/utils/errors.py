# -*- coding: utf-8 -*-
"""
异常类型定义
用途：统一项目中的错误分类，每类错误对应命令行退出码
"""


class FcmError(Exception):
    """
    项目异常基类
    用途：所有可预期错误的公共父类，携带命令行退出码
    """

    exit_code = 1


class UsageError(FcmError):
    """命令行用法错误（未知命令、参数不合法）"""

    exit_code = 1


class ConfigError(UsageError):
    """配置文件或覆盖项错误（未知分组、未知键、值类型不符）"""


class DataError(FcmError, ValueError):
    """输入数据错误（文件损坏、样本为空、标签长度不一致等）"""

    exit_code = 2


class FcsFormatError(DataError):
    """FCS文件格式错误：缺少关键字、DATA段长度不一致、不支持的$DATATYPE"""


class MarkerError(DataError):
    """标记物（marker）错误：缺失、重复或被屏蔽的标记物不存在"""


class ShapeError(FcmError, ValueError):
    """张量形状不匹配，消息中包含算子类型和出错的维度"""

    exit_code = 3


class NumericalError(FcmError, ArithmeticError):
    """数值错误：非有限损失、梯度检查失败等"""

    exit_code = 3

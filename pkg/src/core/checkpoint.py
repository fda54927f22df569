# -*- coding: utf-8 -*-
"""
参数检查点容器
用途：以带版本头的扁平二进制格式保存和读取命名参数（名称、形状、float32小端数据）
"""

import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Union

import numpy as np
import torch

from ..utils.errors import DataError

MAGIC = b"FCMP"
VERSION = 1


def save_parameters(state: Dict[str, torch.Tensor], path: Union[str, Path]) -> Path:
    """
    保存参数容器
    参数：
        state: 名称到张量的映射（如 model.state_dict()）
        path: 输出文件路径
    返回值：写入的文件路径
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(state)))
        for name, tensor in state.items():
            encoded = name.encode("utf-8")
            array = tensor.detach().cpu().to(torch.float64).numpy().astype("<f4")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", array.ndim))
            if array.ndim:
                f.write(struct.pack(f"<{array.ndim}I", *array.shape))
            f.write(array.tobytes(order="C"))
    return path


def load_parameters(path: Union[str, Path]) -> "OrderedDict[str, torch.Tensor]":
    """
    读取参数容器
    参数：
        path: 检查点文件路径
    返回值：按写入顺序排列的名称到float32张量的映射
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"检查点文件不存在: {path}")
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise DataError(f"不是参数检查点文件: {path}")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise DataError(f"不支持的检查点版本 {version} (支持 {VERSION}): {path}")

    offset = 12
    state: "OrderedDict[str, torch.Tensor]" = OrderedDict()
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", raw, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", raw, offset) if ndim else ()
            offset += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            payload = np.frombuffer(raw, dtype="<f4", count=size, offset=offset)
            offset += 4 * size
            state[name] = torch.from_numpy(payload.astype(np.float32).reshape(shape))
    except (struct.error, ValueError) as e:
        raise DataError(f"检查点文件已截断或损坏: {path} ({e})")
    return state


def restore_state(module: torch.nn.Module, state: Dict[str, torch.Tensor]) -> None:
    """
    把读取的参数载入模块，非浮点缓冲区（如 num_batches_tracked）按目标类型转换
    """
    target = module.state_dict()
    missing = [name for name in target if name not in state]
    if missing:
        raise DataError(f"检查点缺少参数: {', '.join(missing[:5])}")
    converted = {name: state[name].to(target[name].dtype).reshape(target[name].shape) for name in target}
    module.load_state_dict(converted)

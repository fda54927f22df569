# -*- coding: utf-8 -*-
"""
FCS文件解析模块
用途：读取FCS 3.0/3.1格式的流式细胞术文件（HEADER、TEXT、DATA三个段），转换为FcmSample；
     同时提供构造FCS字节流的工具，用于生成测试样例
"""

from pathlib import Path
from typing import BinaryIO, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..utils.errors import FcsFormatError, MarkerError
from .dataset_loader import FcmSample

SUPPORTED_VERSIONS = ("FCS3.0", "FCS3.1")
HEADER_LENGTH = 58

LITTLE_ENDIAN_ORDERS = ("1,2,3,4", "1,2", "1,2,3,4,5,6,7,8")
BIG_ENDIAN_ORDERS = ("4,3,2,1", "2,1", "8,7,6,5,4,3,2,1")


def read_header(raw: bytes) -> Dict[str, Union[str, int]]:
    """
    解析HEADER段
    参数：
        raw: 完整文件字节
    返回值：包含 version、text_begin/text_end、data_begin/data_end 的字典
    """
    if len(raw) < HEADER_LENGTH:
        raise FcsFormatError(f"文件过短, 无法读取HEADER段 ({len(raw)} 字节)")
    version = raw[:6].decode("ascii", errors="replace")
    if version not in SUPPORTED_VERSIONS:
        raise FcsFormatError(f"不支持的FCS版本: {version!r}")

    def offset(start: int) -> int:
        field = raw[start:start + 8].decode("ascii", errors="replace").strip()
        if not field:
            return 0
        if not field.isdigit():
            raise FcsFormatError(f"HEADER偏移量不是整数: {field!r}")
        return int(field)

    return {
        "version": version,
        "text_begin": offset(10),
        "text_end": offset(18),
        "data_begin": offset(26),
        "data_end": offset(34),
    }


def parse_text_segment(segment: bytes) -> Dict[str, str]:
    """
    解析TEXT段
    参数：
        segment: TEXT段字节（首字节为分隔符）
    返回值：关键字（统一为大写）到取值的字典；值中成对出现的分隔符按转义规则还原为单个分隔符
    """
    if not segment:
        raise FcsFormatError("TEXT段为空")
    text = segment.decode("latin-1")
    delim = text[0]
    tokens: List[str] = []
    current: List[str] = []
    pos = 1
    while pos < len(text):
        char = text[pos]
        if char == delim:
            if pos + 1 < len(text) and text[pos + 1] == delim:
                current.append(delim)
                pos += 2
                continue
            tokens.append("".join(current))
            current = []
        else:
            current.append(char)
        pos += 1
    if current and "".join(current).strip():
        # 结尾缺少分隔符时保留最后一个片段
        tokens.append("".join(current))

    if len(tokens) % 2 != 0:
        raise FcsFormatError("TEXT段关键字与取值个数不成对")
    return {tokens[i].strip().upper(): tokens[i + 1] for i in range(0, len(tokens), 2)}


def _require(text: Dict[str, str], key: str) -> str:
    if key not in text:
        raise FcsFormatError(f"缺少必需的关键字: {key}")
    return text[key]


def _require_int(text: Dict[str, str], key: str) -> int:
    value = _require(text, key).strip()
    try:
        return int(value)
    except ValueError:
        raise FcsFormatError(f"关键字 {key} 的取值不是整数: {value!r}")


def _byte_order(text: Dict[str, str]) -> str:
    order = _require(text, "$BYTEORD").replace(" ", "")
    if order in LITTLE_ENDIAN_ORDERS:
        return "<"
    if order in BIG_ENDIAN_ORDERS:
        return ">"
    raise FcsFormatError(f"不支持的 $BYTEORD: {order}")


def _data_dtype(text: Dict[str, str], n_params: int) -> Tuple[np.dtype, List[int]]:
    datatype = _require(text, "$DATATYPE").strip().upper()
    endian = _byte_order(text)
    if datatype == "F":
        widths = [32] * n_params
        return np.dtype(f"{endian}f4"), widths
    if datatype == "D":
        widths = [64] * n_params
        return np.dtype(f"{endian}f8"), widths
    if datatype == "I":
        widths = [_require_int(text, f"$P{i}B") for i in range(1, n_params + 1)]
        for i, width in enumerate(widths, start=1):
            if width not in (16, 32):
                raise FcsFormatError(f"$DATATYPE I 仅支持16或32位, $P{i}B={width}")
        if len(set(widths)) == 1:
            return np.dtype(f"{endian}u{widths[0] // 8}"), widths
        # 位宽混合时使用结构化类型逐列解码
        fields = [(f"p{i}", f"{endian}u{w // 8}") for i, w in enumerate(widths)]
        return np.dtype(fields), widths
    raise FcsFormatError(f"不支持的 $DATATYPE: {datatype}")


def _marker_names(text: Dict[str, str], n_params: int) -> List[str]:
    names = []
    for i in range(1, n_params + 1):
        short = _require(text, f"$P{i}N").strip()
        stain = text.get(f"$P{i}S", "").strip()
        names.append(stain if stain else short)
    return names


def parse_fcs(source: Union[bytes, BinaryIO], sample_id: Optional[str] = None,
              label_column: Optional[str] = None) -> FcmSample:
    """
    解析FCS 3.0/3.1字节流
    参数：
        source: 文件字节或二进制文件对象
        sample_id: 样本编号，默认取 $FIL 或 "fcs"
        label_column: 作为标签的参数名（从特征中移除并二值化）
    返回值：FcmSample，事件矩阵为 $TOT 行 $PAR 列
    """
    raw = source if isinstance(source, (bytes, bytearray)) else source.read()
    raw = bytes(raw)
    header = read_header(raw)

    text_begin, text_end = header["text_begin"], header["text_end"]
    if text_end >= len(raw) or text_begin >= text_end:
        raise FcsFormatError(f"TEXT段偏移量无效: [{text_begin}, {text_end}], 文件长度 {len(raw)}")
    text = parse_text_segment(raw[text_begin:text_end + 1])

    n_params = _require_int(text, "$PAR")
    n_events = _require_int(text, "$TOT")
    if n_params < 1:
        raise FcsFormatError(f"$PAR 必须为正数, 实际 {n_params}")
    dtype, widths = _data_dtype(text, n_params)
    markers = _marker_names(text, n_params)

    data_begin, data_end = header["data_begin"], header["data_end"]
    if data_begin == 0 and data_end == 0:
        # FCS 3.1 大文件：偏移量写在TEXT段中
        data_begin = _require_int(text, "$BEGINDATA")
        data_end = _require_int(text, "$ENDDATA")

    expected = n_events * sum(widths) // 8
    actual = data_end - data_begin + 1 if data_end >= data_begin else 0
    if actual != expected or data_begin + actual > len(raw):
        raise FcsFormatError(
            f"DATA段长度与 $TOT×$PAR×位宽 不一致: 期望 {expected} 字节 "
            f"($TOT={n_events}, $PAR={n_params}), DATA段声明 {actual} 字节, "
            f"文件剩余 {max(0, len(raw) - data_begin)} 字节")

    buffer = np.frombuffer(raw, dtype=dtype, count=n_events * (1 if dtype.names else n_params),
                           offset=data_begin)
    if dtype.names:
        events = np.stack([buffer[name].astype(np.float64) for name in dtype.names], axis=1)
    else:
        events = buffer.reshape(n_events, n_params)
    events = events.astype(np.float32)

    if sample_id is None:
        sample_id = text.get("$FIL", "fcs").strip() or "fcs"
    labels = None
    if label_column is not None:
        if label_column not in markers:
            raise MarkerError(f"样本 {sample_id} 中不存在标签参数: {label_column}")
        column = markers.index(label_column)
        labels = (events[:, column] != 0).astype(np.int64)
        events = np.delete(events, column, axis=1)
        markers = markers[:column] + markers[column + 1:]

    return FcmSample(events=events, markers=markers, labels=labels, sample_id=sample_id,
                     metadata={"fcs_version": header["version"]})


def read_fcs(path: Union[str, Path], label_column: Optional[str] = None) -> FcmSample:
    """
    读取FCS文件
    参数：
        path: 文件路径
        label_column: 标签参数名
    返回值：FcmSample，样本编号取文件名（不含扩展名）
    """
    path = Path(path)
    with open(path, "rb") as f:
        sample = parse_fcs(f, sample_id=path.stem, label_column=label_column)
    sample.metadata["source"] = str(path)
    return sample


def read_fcs_markers(path: Union[str, Path], label_column: Optional[str] = None) -> List[str]:
    """
    只读取HEADER和TEXT段，返回特征标记物名称（不含标签参数），不解码DATA段
    """
    path = Path(path)
    with open(path, "rb") as f:
        header = read_header(f.read(HEADER_LENGTH))
        text_begin, text_end = header["text_begin"], header["text_end"]
        if text_begin >= text_end:
            raise FcsFormatError(f"{path.name}: TEXT段偏移量无效: [{text_begin}, {text_end}]")
        f.seek(text_begin)
        segment = f.read(text_end - text_begin + 1)
    if len(segment) != text_end - text_begin + 1:
        raise FcsFormatError(f"{path.name}: 文件在TEXT段内截断")
    text = parse_text_segment(segment)
    markers = _marker_names(text, _require_int(text, "$PAR"))
    if label_column is not None:
        if label_column not in markers:
            raise MarkerError(f"样本 {path.stem} 中不存在标签参数: {label_column}")
        markers.remove(label_column)
    return markers


def _escape(value: str, delim: str) -> str:
    return value.replace(delim, delim * 2)


def build_fcs_bytes(events: np.ndarray, markers: Sequence[str], byteorder: str = "little",
                    datatype: str = "F", version: str = "FCS3.1", delimiter: str = "/",
                    extra_text: Optional[Dict[str, str]] = None, bits: int = 32) -> bytes:
    """
    构造FCS字节流（测试样例用）
    参数：
        events: (n, F) 事件矩阵
        markers: 参数名列表（写入 $PnN）
        byteorder: "little" 或 "big"
        datatype: "F"、"D" 或 "I"
        version: "FCS3.0" 或 "FCS3.1"
        delimiter: TEXT段分隔符，值中出现时按规则成对转义
        extra_text: 额外的TEXT关键字
        bits: datatype为I时的位宽
    返回值：完整文件字节
    """
    events = np.asarray(events)
    n_events, n_params = events.shape
    endian = "<" if byteorder == "little" else ">"
    if datatype == "F":
        data = events.astype(f"{endian}f4").tobytes()
        width = 32
    elif datatype == "D":
        data = events.astype(f"{endian}f8").tobytes()
        width = 64
    else:
        data = events.astype(f"{endian}u{bits // 8}").tobytes()
        width = bits

    keywords: Dict[str, str] = {
        "$BYTEORD": "1,2,3,4" if byteorder == "little" else "4,3,2,1",
        "$DATATYPE": datatype,
        "$MODE": "L",
        "$NEXTDATA": "0",
        "$PAR": str(n_params),
        "$TOT": str(n_events),
    }
    for i, name in enumerate(markers, start=1):
        keywords[f"$P{i}N"] = name
        keywords[f"$P{i}B"] = str(width)
        keywords[f"$P{i}E"] = "0,0"
        keywords[f"$P{i}R"] = "262144"
    keywords.update(extra_text or {})

    def render(begin_data: int, end_data: int) -> bytes:
        entries = dict(keywords)
        entries["$BEGINDATA"] = str(begin_data)
        entries["$ENDDATA"] = str(end_data)
        body = "".join(f"{_escape(k, delimiter)}{delimiter}{_escape(v, delimiter)}{delimiter}"
                       for k, v in entries.items())
        return (delimiter + body).encode("latin-1")

    # 反复渲染直到TEXT段长度不再变化，$BEGINDATA 等偏移量才自洽
    text_begin = HEADER_LENGTH
    text = render(0, 0)
    while True:
        data_begin = text_begin + len(text)
        data_end = data_begin + len(data) - 1
        rendered = render(data_begin, data_end)
        if len(rendered) == len(text):
            text = rendered
            break
        text = rendered
    text_end = text_begin + len(text) - 1

    header = version.ljust(10).encode("ascii")
    for value in (text_begin, text_end, data_begin, data_end, 0, 0):
        header += str(value).rjust(8).encode("ascii")
    return header + text + data


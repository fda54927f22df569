# -*- coding: utf-8 -*-
"""
日志工具模块
用途：根据 Config.LOGGING_CONFIG 配置标准日志器，并提供训练日志的逐行JSON记录器
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional

from .config import Config

_ROOT_NAME = "fcm"
_configured = False


def get_logger(name: str) -> logging.Logger:
    """
    获取项目日志器
    参数：
        name: 模块名称
    返回值：挂在项目根日志器下的子日志器
    """
    global _configured
    if not _configured:
        setup_logging()
    return logging.getLogger(f"{_ROOT_NAME}.{name}")


def setup_logging(log_dir: Optional[Path] = None) -> logging.Logger:
    """
    配置项目根日志器
    参数：
        log_dir: 日志文件目录；为None时只输出到控制台
    返回值：根日志器
    使用场景：命令行入口调用一次，把日志文件写入 --out 目录
    """
    global _configured
    settings = Config.LOGGING_CONFIG
    root = logging.getLogger(_ROOT_NAME)
    root.setLevel(settings["level"])
    formatter = logging.Formatter(settings["format"])

    if not any(isinstance(h, logging.StreamHandler) and not isinstance(h, logging.FileHandler)
               for h in root.handlers):
        console = logging.StreamHandler()
        console.setFormatter(formatter)
        root.addHandler(console)

    if log_dir is not None and settings.get("file_handler", False):
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        for handler in [h for h in root.handlers if isinstance(h, logging.FileHandler)]:
            root.removeHandler(handler)
            handler.close()
        file_handler = logging.FileHandler(log_dir / "run.log", encoding="utf-8")
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)

    root.propagate = False
    _configured = True
    return root


class JsonlWriter:
    """
    逐行JSON记录器
    用途：训练过程中每轮写入一条结构化记录（epoch, lr, train_loss, val_mean_f1）
    """

    def __init__(self, path: Optional[Path]):
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def write(self, record: Dict[str, Any]) -> None:
        if self.path is None:
            return
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")

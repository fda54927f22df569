# -*- coding: utf-8 -*-
"""
流式细胞术MRD检测命令行入口
用途：生成合成数据、训练、评估和导出结果
使用方法：python run_cli.py <命令> [参数]，例如 python run_cli.py synth --samples 40 --out data/synth
"""

import sys
from pathlib import Path

# 添加项目根目录到Python路径
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from src.scripts.cli import run

if __name__ == "__main__":
    sys.exit(run(sys.argv[1:]))

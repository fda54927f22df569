# -*- coding: utf-8 -*-
"""
流式细胞术MRD检测项目主包
提供事件级原始细胞分类的数据处理、模型、训练与评估模块
"""

__version__ = "1.0.0"

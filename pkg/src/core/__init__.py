# -*- coding: utf-8 -*-
"""
核心计算模块包
包含算子目录与记录带、梯度检查和参数检查点容器
"""

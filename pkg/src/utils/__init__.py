# -*- coding: utf-8 -*-
"""
工具模块包
包含配置管理、日志、异常类型和几何工具（k-NN图、最远点采样）
"""

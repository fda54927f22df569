# -*- coding: utf-8 -*-
"""
服务模块包
包含逐样本评估、跨实验室评估和PCA特征导出
"""

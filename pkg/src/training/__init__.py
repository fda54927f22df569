# -*- coding: utf-8 -*-
"""
模型训练模块包
包含学习率调度与优化器、训练循环和多架构实验管理
"""

# -*- coding: utf-8 -*-
"""
模型架构模块包
包含集合注意力、图神经网络、ASAP池化、MLP、PointNet等网络层，以及组装20种架构的模型库
"""

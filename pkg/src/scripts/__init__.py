"""
数据与命令行模块
用途：FCS解析、数据集加载、合成数据生成和命令行工具
"""

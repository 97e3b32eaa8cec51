"""
MISO NOMA 能效公平波束成形库
"""

"""
异常定义 - 波束成形设计、锥规划与仿真框架共用
"""
from typing import Any, Optional


class NomaEEError(Exception):
    """所有库内异常的基类"""


class ScenarioError(NomaEEError, ValueError):
    """场景参数非法，或用户未按信道强度排序"""


class InfeasibleScenario(NomaEEError):
    """初始化阶段无法在功率预算内满足速率与SIC约束"""

    def __init__(self, message: str, required_power: float = float('nan')):
        super().__init__(message)
        self.required_power = required_power


class DegenerateExpansion(NomaEEError):
    """Taylor展开点退化（tau^(n) 过于接近 1）"""


class ZeroEEInitialization(NomaEEError):
    """PF设计要求所有用户的初始能效为正"""


class SolverFailure(NomaEEError):
    """子问题求解失败，保留失败的迭代序号与部分结果"""

    def __init__(self, message: str, iteration: int, status: str, partial: Optional[Any] = None):
        super().__init__(message)
        self.iteration = iteration
        self.status = status
        self.partial = partial


class UnboundedGrid(NomaEEError):
    """指数锥切线回退模式下缺少 delta 的取值范围"""


class ProgramStructureError(NomaEEError, ValueError):
    """锥规划结构不合法（块维度、变量下标、转储格式）"""


class NoFeasiblePoint(NomaEEError):
    """网格搜索中没有可行点"""


class EmptySelection(NomaEEError):
    """绘图数据筛选结果为空"""

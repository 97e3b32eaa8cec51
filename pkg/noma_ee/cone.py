"""
标准形式锥规划 - 表示、构造器、cvxpy求解后端与调试转储

约定: 最大化 c^T x，约束为若干锥块  A_blk x + b_blk ∈ K_blk，
K ∈ {Zero, Nonnegative, SecondOrder(dim), Exponential}。
复数量不进入本层，调用方把每个 w_i 展开为 [Re(w_i), Im(w_i)] 共 2N 个实数。
"""
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import cvxpy as cp
import numpy as np

from config import Config
from .errors import ProgramStructureError, UnboundedGrid

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)

# 支持指数锥的后端；其余后端走切线回退
EXP_CONE_SOLVERS = {'CLARABEL', 'ECOS', 'SCS', 'MOSEK'}

EXP2_GRID_POINTS = 33
EXP2_CUT_TOL = 1e-6
MAX_CUT_ROUNDS = 60


class ConeKind(str, Enum):
    ZERO = 'ZERO'
    NONNEG = 'NONNEGATIVE'
    SOC = 'SECOND_ORDER'
    EXP = 'EXPONENTIAL'


class SolveStatus(str, Enum):
    OPTIMAL = 'Optimal'
    INFEASIBLE = 'Infeasible'
    UNBOUNDED = 'Unbounded'
    NUMERICAL_ERROR = 'NumericalError'
    ITER_LIMIT = 'IterLimit'


@dataclass(frozen=True)
class ConeBlock:
    A: np.ndarray
    b: np.ndarray
    kind: ConeKind
    label: str = ''

    @property
    def dim(self) -> int:
        return self.A.shape[0]


@dataclass
class ConicProgram:
    objective: np.ndarray
    var_count: int
    blocks: List[ConeBlock]
    variables: Dict[str, np.ndarray] = field(default_factory=dict)
    # 回退模式下需要事后加切线的 (delta, tau) 下标对
    exp2_pairs: List[Tuple[int, int]] = field(default_factory=list)

    def validate(self) -> 'ConicProgram':
        if self.objective.shape != (self.var_count,):
            raise ProgramStructureError(f"目标向量长度 {self.objective.shape} 与变量数 {self.var_count} 不符")
        for idx, blk in enumerate(self.blocks):
            if blk.A.ndim != 2 or blk.A.shape[1] != self.var_count:
                raise ProgramStructureError(f"第{idx}块 A 的列数应为 {self.var_count}: {blk.A.shape}")
            if blk.b.shape != (blk.A.shape[0],):
                raise ProgramStructureError(f"第{idx}块偏移长度与行数不符")
            if blk.kind == ConeKind.SOC and blk.dim < 2:
                raise ProgramStructureError(f"第{idx}块二阶锥维度必须 >= 2")
            if blk.kind == ConeKind.EXP and blk.dim != 3:
                raise ProgramStructureError(f"第{idx}块指数锥维度必须为 3")
            if blk.dim == 0:
                raise ProgramStructureError(f"第{idx}块为空")
        for delta, tau in self.exp2_pairs:
            if not (0 <= delta < self.var_count and 0 <= tau < self.var_count):
                raise ProgramStructureError(f"exp2 下标越界: ({delta}, {tau})")
        return self

    def block_counts(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for blk in self.blocks:
            counts[blk.kind.value] = counts.get(blk.kind.value, 0) + 1
        return counts

    def violations(self, x: np.ndarray) -> np.ndarray:
        """每个锥块在点 x 处的原始可行性违反量（0表示满足）"""
        out = np.zeros(len(self.blocks))
        for idx, blk in enumerate(self.blocks):
            out[idx] = cone_violation(blk.A @ x + blk.b, blk.kind)
        return out


@dataclass
class SolveResult:
    status: SolveStatus
    x: np.ndarray
    objective: float
    solver_stats: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == SolveStatus.OPTIMAL


def cone_violation(v: np.ndarray, kind: ConeKind) -> float:
    if kind == ConeKind.ZERO:
        return float(np.max(np.abs(v)))
    if kind == ConeKind.NONNEG:
        return float(max(0.0, -np.min(v)))
    if kind == ConeKind.SOC:
        return float(max(0.0, np.linalg.norm(v[1:]) - v[0]))
    # (x, y, z): y exp(x/y) <= z, y > 0
    x, y, z = v
    if y <= 0:
        return float(max(-y, 0.0) + max(0.0, -z) + (max(0.0, x) if y == 0 else 0.0))
    with np.errstate(over='ignore'):
        return float(max(0.0, y * math.exp(min(x / y, 700.0)) - z))


def affine_value(form: np.ndarray, x: np.ndarray) -> float:
    """仿射式 form = [系数..., 常数] 在 x 处的取值"""
    return float(form[:-1] @ x + form[-1])


def exp2_tangent(g: float, delta) -> np.ndarray:
    """2^delta 在 g 处的切线: 2^g (1 + ln2 (delta - g))，始终不超过 2^delta"""
    return 2.0 ** g * (1.0 + LN2 * (np.asarray(delta, dtype=float) - g))


class ConicBuilder:
    """
    锥规划构造器

    先用 add_variable 声明全部变量，再通过 form()/unit() 生成仿射式并追加锥块。
    仿射式统一表示为长度 n+1 的数组，最后一项为常数。
    """

    def __init__(self, has_exp_cone: bool = True, exp2_bounds: Optional[Tuple[float, float]] = None,
                 exp2_grid_points: int = EXP2_GRID_POINTS):
        self.has_exp_cone = has_exp_cone
        self.exp2_bounds = exp2_bounds
        self.exp2_grid_points = exp2_grid_points
        self.variables: Dict[str, np.ndarray] = {}
        self._count = 0
        self._frozen = False
        self._blocks: List[ConeBlock] = []
        self._objective: Optional[np.ndarray] = None
        self._exp2_pairs: List[Tuple[int, int]] = []

    @property
    def var_count(self) -> int:
        return self._count

    def add_variable(self, name: str, size: int = 1) -> np.ndarray:
        if self._frozen:
            raise ProgramStructureError(f"变量布局已冻结，无法再添加变量 {name}")
        if name in self.variables:
            raise ProgramStructureError(f"变量重复声明: {name}")
        idx = np.arange(self._count, self._count + size)
        self.variables[name] = idx
        self._count += size
        return idx

    def form(self) -> np.ndarray:
        self._frozen = True
        return np.zeros(self._count + 1)

    def unit(self, idx: int, coef: float = 1.0) -> np.ndarray:
        f = self.form()
        f[idx] = coef
        return f

    def const(self, value: float) -> np.ndarray:
        f = self.form()
        f[-1] = value
        return f

    def _append(self, forms: Sequence[np.ndarray], kind: ConeKind, label: str):
        self._frozen = True
        rows = np.vstack([np.asarray(f, dtype=float) for f in forms])
        if rows.shape[1] != self._count + 1:
            raise ProgramStructureError(f"仿射式长度错误: {rows.shape[1]} != {self._count + 1}")
        self._blocks.append(ConeBlock(A=rows[:, :-1].copy(), b=rows[:, -1].copy(), kind=kind, label=label))

    def add_zero(self, forms: Sequence[np.ndarray], label: str = ''):
        self._append(forms, ConeKind.ZERO, label)

    def add_nonneg(self, form: np.ndarray, label: str = ''):
        self._append([form], ConeKind.NONNEG, label)

    def add_soc(self, t: np.ndarray, u: Sequence[np.ndarray], label: str = ''):
        """t >= ||u||"""
        self._append([t, *u], ConeKind.SOC, label)

    def add_exp(self, x: np.ndarray, y: np.ndarray, z: np.ndarray, label: str = ''):
        """y exp(x/y) <= z"""
        self._append([x, y, z], ConeKind.EXP, label)

    def add_exp2_cut(self, var_delta: int, var_tau: int, g: float, label: str = ''):
        slope = 2.0 ** g * LN2
        f = self.unit(var_tau)
        f[var_delta] -= slope
        f[-1] -= 2.0 ** g * (1.0 - LN2 * g)
        self.add_nonneg(f, label)

    def register_exp2_pair(self, var_delta: int, var_tau: int):
        self._exp2_pairs.append((int(var_delta), int(var_tau)))

    def set_objective(self, form: np.ndarray):
        """最大化 form（常数项被忽略）"""
        self._objective = np.asarray(form[:-1], dtype=float).copy()

    def build(self) -> ConicProgram:
        objective = self._objective if self._objective is not None else np.zeros(self._count)
        program = ConicProgram(objective=objective, var_count=self._count, blocks=list(self._blocks),
                               variables=dict(self.variables), exp2_pairs=list(self._exp2_pairs))
        return program.validate()


def complex_forms(builder: ConicBuilder, h: np.ndarray, w_idx: np.ndarray,
                  phase: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    """
    h^H w 的实部与虚部两个实仿射式

    w_idx 为 2N 个下标（前N个为实部，后N个为虚部）。phase 非零时返回
    e^{-j phase} h^H w 的实部/虚部。
    """
    n = len(h)
    coeff = np.conj(h) * np.exp(-1j * phase)
    a, b = coeff.real, coeff.imag
    re_form = builder.form()
    im_form = builder.form()
    # (a + jb)(x + jy) = (ax - by) + j(ay + bx)
    re_form[w_idx[:n]] = a
    re_form[w_idx[n:]] = -b
    im_form[w_idx[:n]] = b
    im_form[w_idx[n:]] = a
    return re_form, im_form


def encode_exp2(var_delta: int, var_tau: int, builder: ConicBuilder,
                bounds: Optional[Tuple[float, float]] = None, label: str = 'exp2'):
    """
    追加 tau >= 2^delta

    指数锥可用时写成 (ln2·delta, 1, tau) ∈ K_exp；否则在 [lo, hi] 上均匀取点
    追加切线割平面，并登记下标对，求解后由 ConeSolver 迭代加割至违反量 <= 1e-6。
    """
    if builder.has_exp_cone:
        builder.add_exp(builder.unit(var_delta, LN2), builder.const(1.0), builder.unit(var_tau), label)
        return
    bounds = bounds if bounds is not None else builder.exp2_bounds
    if bounds is None:
        raise UnboundedGrid(f"切线回退模式需要 delta 的取值范围 (变量 {var_delta})")
    lo, hi = bounds
    for g in np.linspace(lo, hi, builder.exp2_grid_points):
        builder.add_exp2_cut(var_delta, var_tau, float(g), label)
    builder.register_exp2_pair(var_delta, var_tau)


# ---------------------------------------------------------------------------
# 求解后端
# ---------------------------------------------------------------------------

_CVXPY_STATUS = {
    cp.OPTIMAL: SolveStatus.OPTIMAL,
    cp.OPTIMAL_INACCURATE: SolveStatus.OPTIMAL,
    cp.INFEASIBLE: SolveStatus.INFEASIBLE,
    cp.INFEASIBLE_INACCURATE: SolveStatus.INFEASIBLE,
    cp.UNBOUNDED: SolveStatus.UNBOUNDED,
    cp.UNBOUNDED_INACCURATE: SolveStatus.UNBOUNDED,
    getattr(cp, 'USER_LIMIT', 'user_limit'): SolveStatus.ITER_LIMIT,
}


def _solver_options(name: str, tol: float, max_iters: int) -> dict:
    if name == 'CLARABEL':
        return {'tol_gap_abs': tol, 'tol_gap_rel': tol, 'tol_feas': tol, 'max_iter': max_iters}
    if name == 'ECOS':
        return {'abstol': tol, 'reltol': tol, 'feastol': tol, 'max_iters': max_iters}
    if name == 'SCS':
        return {'eps_abs': tol, 'eps_rel': tol, 'max_iters': max_iters}
    return {}


class ConeSolver:
    """cvxpy 求解后端封装"""

    def __init__(self, name: str = 'CLARABEL', exp_cone: Optional[bool] = None):
        self.name = name.upper()
        self.has_exp_cone = (self.name in EXP_CONE_SOLVERS) if exp_cone is None else exp_cone

    def __repr__(self):
        return f"ConeSolver({self.name!r}, exp_cone={self.has_exp_cone})"

    def _to_cvxpy(self, p: ConicProgram):
        x = cp.Variable(p.var_count)
        constraints = []
        by_kind: Dict[ConeKind, List[ConeBlock]] = {}
        for blk in p.blocks:
            by_kind.setdefault(blk.kind, []).append(blk)
        # 同类锥块堆叠成一个向量化约束，减少 cvxpy 的建模开销
        for kind in (ConeKind.ZERO, ConeKind.NONNEG):
            blocks = by_kind.get(kind, [])
            if blocks:
                A = np.vstack([blk.A for blk in blocks])
                b = np.concatenate([blk.b for blk in blocks])
                constraints.append(A @ x + b == 0 if kind == ConeKind.ZERO else A @ x + b >= 0)
        soc_by_dim: Dict[int, List[ConeBlock]] = {}
        for blk in by_kind.get(ConeKind.SOC, []):
            soc_by_dim.setdefault(blk.dim, []).append(blk)
        for dim, blocks in sorted(soc_by_dim.items()):
            rows = [np.vstack([blk.A[r] for blk in blocks]) @ x + np.array([blk.b[r] for blk in blocks])
                    for r in range(dim)]
            constraints.append(cp.SOC(rows[0], cp.vstack(rows[1:]), axis=0))
        exp_blocks = by_kind.get(ConeKind.EXP, [])
        if exp_blocks:
            rows = [np.vstack([blk.A[r] for blk in exp_blocks]) @ x + np.array([blk.b[r] for blk in exp_blocks])
                    for r in range(3)]
            constraints.append(cp.ExpCone(*rows))
        problem = cp.Problem(cp.Maximize(p.objective @ x), constraints)
        return problem, x

    def _solve_once(self, p: ConicProgram, tol: float, max_iters: int) -> SolveResult:
        if not self.has_exp_cone and any(blk.kind == ConeKind.EXP for blk in p.blocks):
            raise ProgramStructureError(f"后端 {self.name} 不支持指数锥块")
        problem, x = self._to_cvxpy(p)
        start = time.perf_counter()
        try:
            problem.solve(solver=self.name, **_solver_options(self.name, tol, max_iters))
        except cp.error.SolverError as e:
            logger.warning(f"求解器 {self.name} 出错: {e}")
            return SolveResult(SolveStatus.NUMERICAL_ERROR, np.full(p.var_count, np.nan), float('nan'),
                               {'solver': self.name, 'error': str(e)})
        elapsed = time.perf_counter() - start
        status = _CVXPY_STATUS.get(problem.status, SolveStatus.NUMERICAL_ERROR)
        stats = {'solver': self.name, 'cvxpy_status': problem.status,
                 'solve_time': elapsed, 'iterations': getattr(problem.solver_stats, 'num_iters', None)}
        if x.value is None:
            if status == SolveStatus.OPTIMAL:
                status = SolveStatus.NUMERICAL_ERROR
            return SolveResult(status, np.full(p.var_count, np.nan), float('nan'), stats)
        xv = np.asarray(x.value, dtype=float).reshape(-1)
        residual = float(np.max(p.violations(xv), initial=0.0))
        stats['primal_residual'] = residual
        if status == SolveStatus.OPTIMAL:
            if problem.status == cp.OPTIMAL_INACCURATE:
                logger.warning(f"求解器 {self.name} 返回 optimal_inaccurate，残差 {residual:.3e}")
            if residual > 1e3 * tol * (1.0 + float(np.max(np.abs(xv), initial=0.0))):
                logger.warning(f"最优解原始残差过大: {residual:.3e}")
                status = SolveStatus.NUMERICAL_ERROR
        return SolveResult(status, xv, float(p.objective @ xv), stats)

    def solve(self, p: ConicProgram, tol: float = Config.SOLVER_TOL, max_iters: int = 200) -> SolveResult:
        p.validate()
        result = self._solve_once(p, tol, max_iters)
        rounds = 0
        blocks = list(p.blocks)
        # 切线回退：对违反 tau >= 2^delta 的点追加切线后重解
        while result.ok and p.exp2_pairs:
            x = result.x
            violated = [(d, t) for d, t in p.exp2_pairs if 2.0 ** x[d] - x[t] > EXP2_CUT_TOL]
            if not violated:
                break
            if rounds >= MAX_CUT_ROUNDS:
                logger.warning(f"切线细化达到上限 {MAX_CUT_ROUNDS} 轮")
                result.status = SolveStatus.ITER_LIMIT
                break
            for d, t in violated:
                g = float(x[d])
                row = np.zeros(p.var_count)
                row[t] = 1.0
                row[d] = -(2.0 ** g) * LN2
                blocks.append(ConeBlock(A=row[None, :], b=np.array([-(2.0 ** g) * (1.0 - LN2 * g)]),
                                        kind=ConeKind.NONNEG, label='exp2-refine'))
            refined = ConicProgram(p.objective, p.var_count, blocks, p.variables, [])
            result = self._solve_once(refined, tol, max_iters)
            rounds += 1
        result.solver_stats['cut_rounds'] = rounds
        return result


@lru_cache(maxsize=None)
def get_solver(name: str, exp_cone: Optional[bool] = None) -> ConeSolver:
    return ConeSolver(name, exp_cone)


# 全局默认求解器实例
default_solver = get_solver(Config.CONE_SOLVER)


def solve(p: ConicProgram, tol: float = Config.SOLVER_TOL, max_iters: int = 200,
          solver: Optional[ConeSolver] = None) -> SolveResult:
    return (solver or default_solver).solve(p, tol, max_iters)


# ---------------------------------------------------------------------------
# 调试转储（纯文本，每个锥块一节，稠密行，最后一列为偏移）
# ---------------------------------------------------------------------------

def _fmt(values) -> str:
    return ' '.join('%.17g' % v for v in values)


def dump_program(p: ConicProgram, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ['# noma_ee conic program (maximize c^T x, A x + b in K)',
             f'var_count {p.var_count}',
             'objective', _fmt(p.objective)]
    for name, idx in p.variables.items():
        lines.append(f'variable {name} ' + ' '.join(str(int(i)) for i in idx))
    for n, blk in enumerate(p.blocks):
        label = (blk.label or '-').replace(' ', '_')
        lines.append(f'block {n} {blk.kind.value} {blk.dim} {label}')
        for r in range(blk.dim):
            lines.append(_fmt(np.append(blk.A[r], blk.b[r])))
    for d, t in p.exp2_pairs:
        lines.append(f'exp2 {d} {t}')
    lines.append('end')
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return path


def load_program(path) -> ConicProgram:
    lines = [ln.strip() for ln in Path(path).read_text(encoding='utf-8').splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith('#')]
    pos = 0

    def take() -> str:
        nonlocal pos
        if pos >= len(lines):
            raise ProgramStructureError(f"转储文件意外结束: {path}")
        pos += 1
        return lines[pos - 1]

    head = take().split()
    if head[0] != 'var_count':
        raise ProgramStructureError(f"缺少 var_count: {head}")
    n = int(head[1])
    if take() != 'objective':
        raise ProgramStructureError("缺少 objective 段")
    objective = np.array([float(v) for v in take().split()])
    variables: Dict[str, np.ndarray] = {}
    blocks: List[ConeBlock] = []
    pairs: List[Tuple[int, int]] = []
    while True:
        tokens = take().split()
        if tokens[0] == 'end':
            break
        if tokens[0] == 'variable':
            variables[tokens[1]] = np.array([int(v) for v in tokens[2:]], dtype=int)
        elif tokens[0] == 'block':
            kind, dim = ConeKind(tokens[2]), int(tokens[3])
            rows = np.array([[float(v) for v in take().split()] for _ in range(dim)])
            if rows.shape != (dim, n + 1):
                raise ProgramStructureError(f"锥块 {tokens[1]} 行宽错误: {rows.shape}")
            label = '' if tokens[4] == '-' else tokens[4]
            blocks.append(ConeBlock(A=rows[:, :-1], b=rows[:, -1], kind=kind, label=label))
        elif tokens[0] == 'exp2':
            pairs.append((int(tokens[1]), int(tokens[2])))
        else:
            raise ProgramStructureError(f"无法识别的行: {' '.join(tokens)}")
    return ConicProgram(objective, n, blocks, variables, pairs).validate()

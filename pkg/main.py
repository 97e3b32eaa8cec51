#!/usr/bin/env python3
"""
主启动脚本 - NOMA 能效公平波束成形命令行

子命令:
    run          单场景运行，打印各设计的速率/功率/能效
    sweep        蒙特卡洛扫描，写出 CSV 与绘图数据
    oracle       网格搜索参考解并与 SCA 设计对比
    init-config  写出默认 TOML 配置
"""
import argparse
import logging
import os
import sys
from datetime import datetime
from pathlib import Path

from pydantic import ValidationError

from config import Config, load_sweep_config, write_default_config
from noma_ee.errors import NomaEEError, ScenarioError
from noma_ee.harness import (PlotMode, compare_with_oracle, emit_plot_data, oracle_scenario,
                             parse_snr_spec, run_scenario, run_sweep)
from noma_ee.oracle import GridSpec
from noma_ee.sca import ScaOptions

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_INTERNAL = 3

logger = logging.getLogger(__name__)


# 配置日志
def setup_logging(log_dir: str = Config.LOG_DIR, level: str = Config.LOG_LEVEL):
    """设置日志配置"""
    if not os.path.exists(log_dir):
        os.makedirs(log_dir)

    log_file = os.path.join(log_dir, f"noma_ee_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log")

    logging.basicConfig(
        level=logging.DEBUG if Config.DEBUG else getattr(logging, level, logging.INFO),
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file, encoding='utf-8'),
            logging.StreamHandler(sys.stdout)
        ],
        force=True,
    )
    return logging.getLogger(__name__)


class CliParser(argparse.ArgumentParser):
    """参数错误时以退出码1结束"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: 错误: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=Path, help='TOML 配置文件路径')
    common.add_argument('--design', choices=['gee-max', 'mmee', 'pf', 'all'], help='波束成形设计')
    common.add_argument('--snr', help='TX-SNR 列表，"a:b:step" 或逗号分隔')
    common.add_argument('--trials', type=int, help='蒙特卡洛试验次数')
    common.add_argument('--seed', type=int, help='64位基础种子')
    common.add_argument('--d3-sweep', help='最弱用户距离列表（逗号分隔，米）')
    common.add_argument('--out', type=Path, help='输出目录')
    common.add_argument('--parallelism', type=int, help='并行进程数')
    common.add_argument('--dump-subproblems', action='store_true', help='转储每次迭代的锥规划')

    parser = CliParser(prog='noma-ee', description='MISO NOMA 能效公平波束成形')
    sub = parser.add_subparsers(dest='command', required=True, parser_class=CliParser)
    sub.add_parser('run', parents=[common], help='单场景运行')
    sub.add_parser('sweep', parents=[common], help='蒙特卡洛扫描')
    oracle = sub.add_parser('oracle', parents=[common], help='网格搜索对比')
    oracle.add_argument('--power-steps', type=int, default=400, help='每个用户的功率网格点数')
    oracle.add_argument('--angle-steps', type=int, default=64, help='N=2 时的方向角网格点数')
    init = sub.add_parser('init-config', help='写出默认配置')
    init.add_argument('path', type=Path, nargs='?', default=Path('noma_ee.toml'))
    return parser


def resolve_config(args):
    """读取配置文件并用命令行参数覆盖"""
    cfg = load_sweep_config(args.config)
    update = {}
    if args.design:
        update['designs'] = ['gee-max', 'mmee', 'pf'] if args.design == 'all' else [args.design]
    if args.snr:
        update['tx_snr_db'] = parse_snr_spec(args.snr)
    if args.trials is not None:
        update['trials'] = args.trials
    if args.seed is not None:
        update['base_seed'] = args.seed
    if args.d3_sweep:
        update['d3_sweep_m'] = [float(v) for v in args.d3_sweep.split(',') if v.strip()]
    if args.out:
        update['output_dir'] = args.out
    if args.parallelism is not None:
        update['parallelism'] = args.parallelism
    if args.dump_subproblems:
        update['dump_subproblems'] = True
    # 覆盖后重新校验
    return type(cfg).model_validate({**cfg.model_dump(), **update})


def cmd_run(cfg) -> int:
    opts = ScaOptions(eps=cfg.eps, max_outer=cfg.max_outer,
                      dump_dir=Path(cfg.output_dir) / 'subproblems' if cfg.dump_subproblems else None)
    scenario, results = run_scenario(cfg, opts=opts)
    print(f"TX-SNR = {cfg.tx_snr_db[0]:g} dB, P_ava = {scenario.p_available:.6g} W, "
          f"K = {scenario.num_users}, N = {scenario.num_antennas}")
    for name, result in results.items():
        m = result.metrics
        print(f"\n[{name}] 状态: {result.stop_reason.value}, 迭代: {result.iterations}")
        print(f"{'用户':>4} {'速率(bits/s)':>16} {'功率(W)':>14} {'能效(bits/J)':>16}")
        for i in range(scenario.num_users):
            print(f"{i + 1:>4} {m.per_user_rate[i]:>16.6g} {m.per_user_power[i]:>14.6g} {m.per_user_ee[i]:>16.6g}")
        print(f"GEE = {m.gee:.6g} bits/J, 最小能效 = {m.min_ee:.6g} bits/J")
    return EXIT_OK


def cmd_sweep(cfg) -> int:
    table = run_sweep(cfg)
    plot_dir = Path(cfg.output_dir) / 'plot_data'
    modes = [PlotMode.DISTANCE_SWEEP] if cfg.d3_sweep_m else [PlotMode.WEAKEST_USER_EE, PlotMode.GEE]
    for mode in modes:
        try:
            emit_plot_data(table, mode, plot_dir, cfg.designs)
        except NomaEEError as e:
            logger.warning(f"⚠️  {mode.value} 绘图数据未生成: {e}")
    logger.info(f"📁 结果目录: {cfg.output_dir}")
    return EXIT_OK


def cmd_oracle(cfg, args) -> int:
    grid = GridSpec(power_steps=args.power_steps, angle_steps=args.angle_steps)
    scenario = oracle_scenario(cfg)
    opts = ScaOptions(eps=cfg.eps, max_outer=cfg.max_outer)
    for name in cfg.designs:
        c = compare_with_oracle(scenario, name, grid, opts)
        verdict = '通过' if c.accepted else '未通过'
        print(f"[{name}] SCA = {c.design_value:.8g}, 网格最优 = {c.oracle.value:.8g}, "
              f"差距 = {c.gap:.3e}, 网格单元变化 = {c.oracle.cell_variation:.3e} -> {verdict}")
    return EXIT_OK


def main(argv=None) -> int:
    """主函数"""
    global logger
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == 'init-config':
        try:
            path = write_default_config(args.path)
        except OSError as e:
            print(f"❌ 写出配置失败: {e}", file=sys.stderr)
            return EXIT_IO
        print(f"✅ 默认配置已写出: {path}")
        return EXIT_OK

    try:
        Config.validate()
        logger = setup_logging()
    except ValueError as e:
        print(f"❌ 配置错误: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"❌ 无法创建日志目录: {e}", file=sys.stderr)
        return EXIT_IO

    try:
        cfg = resolve_config(args)
    except ValidationError as e:
        logger.error(f"❌ 配置校验失败: {e}")
        return EXIT_USAGE
    except ValueError as e:
        logger.error(f"❌ 参数错误: {e}")
        return EXIT_USAGE
    except OSError as e:
        logger.error(f"❌ 读取配置失败: {e}")
        return EXIT_IO

    logger.info(f"🚀 {args.command}: 设计 {list(cfg.designs)}, TX-SNR {cfg.tx_snr_db} dB, 求解器 {Config.CONE_SOLVER}")
    try:
        if args.command == 'run':
            return cmd_run(cfg)
        if args.command == 'sweep':
            return cmd_sweep(cfg)
        return cmd_oracle(cfg, args)
    except ScenarioError as e:
        logger.error(f"❌ 场景参数错误: {e}")
        return EXIT_USAGE
    except OSError as e:
        logger.error(f"❌ 文件读写失败: {e}")
        return EXIT_IO
    except KeyboardInterrupt:
        logger.info("👋 已中断")
        return EXIT_INTERNAL
    except Exception as e:
        logger.exception(f"❌ 运行失败: {e}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

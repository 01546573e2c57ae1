"""
命令行入口

子命令: train, evaluate, analytic, benchmark-search, simulate, reproduce
退出码: 0 成功，2 配置错误，3 数值失败，1 其他错误（含 I/O）
"""

import argparse
import json
import logging
import sys
from typing import Any, Callable, Dict, List, Optional

from pydantic import ValidationError

from app.core.config import setup_logging
from app.core.exceptions import ConfigurationError, NumericalError, RBMSolverError
from app.schemas.analytic_schemas import AnalyticKind
from app.schemas.experiment_schemas import ExperimentConfig
from app.schemas.policy_schemas import GridSpec, PolicyKind
from app.schemas.problem_schemas import CostKind, ObjectiveKind
from app.schemas.training_schemas import LossVariant
from app.services.experiment_service import TABLE_NAMES, experiment_service
from app.services.file_storage_service import clean_data_for_json
from app.services.problem_service import PRESET_NAMES

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _add_problem_arguments(parser: argparse.ArgumentParser) -> None:
    """问题与运行参数；未给出的保留配置文件或环境变量中的值"""
    parser.add_argument("--config", default=None, help="键值格式的实验配置文件")
    parser.add_argument("--preset", choices=PRESET_NAMES, default=None, help="预设问题")
    parser.add_argument("--K", dest="k", type=int, default=None, help="下游缓冲区数或并行维度")
    parser.add_argument("--b", type=float, default=None, help="动作上界")
    parser.add_argument(
        "--objective", choices=[o.value for o in ObjectiveKind], default=None, help="目标类型"
    )
    parser.add_argument("--r", dest="discount_rate", type=float, default=None, help="折现率")
    parser.add_argument("--problem-file", default=None, help="custom 预设的 JSON 问题文件")
    parser.add_argument("--seed", type=int, default=None, help="随机种子")
    parser.add_argument("--workers", type=int, default=None, help="线程数")
    parser.add_argument("--output-dir", default=None, help="结果目录")


def _add_grid_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--T", dest="horizon", type=float, default=None, help="时间范围 T")
    parser.add_argument("--h", dest="step", type=float, default=None, help="时间步长 h")


def _add_eval_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n-paths", dest="eval_paths", type=int, default=None, help="评估路径数")
    parser.add_argument("--eval-horizon", type=float, default=None, help="评估终点")
    parser.add_argument("--burn-in", dest="eval_burn_in", type=float, default=None, help="预热时间")
    parser.add_argument("--eval-step", type=float, default=None, help="评估步长")


def _add_train_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--profile", default=None, help="超参数预设，例如 linear-d2-b10")
    parser.add_argument("--iterations", type=int, default=None, help="迭代次数 M")
    parser.add_argument("--batch-size", type=int, default=None, help="批量大小 B")
    parser.add_argument(
        "--loss-variant", choices=[v.value for v in LossVariant], default=None, help="损失类型"
    )
    parser.add_argument("--decay-c0", type=float, default=None, help="衰减常数 c̃₀")
    parser.add_argument("--decay-c1", type=float, default=None, help="衰减常数 c̃₁")
    parser.add_argument("--value-hidden", default=None, help="价值网络隐藏层，如 50,50,50,50")
    parser.add_argument("--gradient-hidden", default=None, help="梯度网络隐藏层")
    parser.add_argument("--checkpoint-every", type=int, default=None, help="检查点间隔")
    parser.add_argument("--log-every", type=int, default=None, help="日志间隔")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rbm-drift", description="反射布朗运动漂移控制问题的神经网络求解器"
    )
    parser.add_argument("--log-level", default=None, help="日志级别")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="训练价值网络与梯度网络")
    _add_problem_arguments(train)
    _add_grid_arguments(train)
    _add_train_arguments(train)

    evaluate = sub.add_parser("evaluate", help="蒙特卡洛评估策略")
    _add_problem_arguments(evaluate)
    _add_eval_arguments(evaluate)
    evaluate.add_argument(
        "--policy", choices=[k.value for k in PolicyKind], required=True, help="策略类型"
    )
    evaluate.add_argument("--theta", type=float, nargs="+", default=None, help="常数策略")
    evaluate.add_argument("--phi", type=float, nargs="+", default=None, help="对称参数 φ1..φ5")
    evaluate.add_argument("--betas", default=None, help="β 矩阵的 JSON，例如 [[1,0],[0,1]]")
    evaluate.add_argument("--checkpoint", default=None, help="learned 策略的检查点")
    evaluate.add_argument(
        "--use-value-gradient", action="store_true", default=None, help="用 ∇V 提取策略"
    )

    analytic = sub.add_parser("analytic", help="一维解析解")
    analytic.add_argument(
        "--kind", choices=[k.value for k in AnalyticKind], required=True, help="解析解类型"
    )
    analytic.add_argument("--a", type=float, default=1.0, help="方差")
    analytic.add_argument("--b", type=float, default=2.0, help="动作上界")
    analytic.add_argument("--c", type=float, default=1.0, help="线性控制成本")
    analytic.add_argument("--h", type=float, default=2.0, help="持有成本")
    analytic.add_argument("--r", type=float, default=None, help="折现率")
    analytic.add_argument("--alpha", type=float, default=1.0, help="二次成本系数")
    analytic.add_argument("--nominal", type=float, default=1.0, help="名义漂移")
    analytic.add_argument("--grid", type=float, nargs="+", default=(), help="输出导数与策略的 z")

    search = sub.add_parser("benchmark-search", help="基准策略网格搜索")
    _add_problem_arguments(search)
    _add_eval_arguments(search)
    search.add_argument(
        "--family",
        choices=[PolicyKind.LINEAR_BOUNDARY.value, PolicyKind.AFFINE_RATE.value],
        default=None,
        help="策略族，默认线性成本用 linear-boundary、二次成本用 affine-rate",
    )
    search.add_argument("--axis", type=float, nargs="+", default=None, help="每个参数共用的候选值")
    search.add_argument("--no-refine", action="store_true", help="不做二次细化")

    simulate = sub.add_parser("simulate", help="模拟参考策略下的路径")
    _add_problem_arguments(simulate)
    _add_grid_arguments(simulate)
    simulate.add_argument("--batch-size", dest="paths", type=int, default=4, help="路径数")

    reproduce = sub.add_parser("reproduce", help="复现结果表格")
    reproduce.add_argument("table", choices=TABLE_NAMES, help="表格名称")
    reproduce.add_argument("--config", default=None, help="键值格式的实验配置文件")
    reproduce.add_argument("--scale", type=float, default=1.0, help="迭代次数与评估路径数的缩放")
    reproduce.add_argument("--seed", type=int, default=None, help="随机种子")
    reproduce.add_argument("--workers", type=int, default=None, help="线程数")
    reproduce.add_argument("--output-dir", default=None, help="结果目录")
    _add_eval_arguments(reproduce)
    return parser


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {
        key: value
        for key, value in vars(args).items()
        if key in ExperimentConfig.model_fields and value is not None
    }
    return ExperimentConfig.load(args.config, overrides)


def _emit(payload: Any) -> None:
    print(json.dumps(clean_data_for_json(payload), ensure_ascii=False, indent=2, sort_keys=True))


def _run_train(args: argparse.Namespace) -> None:
    cfg = _load_config(args)
    _, summary = experiment_service.run_train(cfg)
    _emit(summary)


def _run_evaluate(args: argparse.Namespace) -> None:
    cfg = _load_config(args)
    spec = experiment_service.build_problem(cfg)
    try:
        betas = json.loads(args.betas) if args.betas else None
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"--betas 不是合法 JSON: {str(e)}")
    policy = experiment_service.build_policy(
        spec,
        PolicyKind(args.policy),
        theta=args.theta,
        betas=betas,
        phi=args.phi,
        checkpoint=args.checkpoint,
        use_value_gradient=bool(args.use_value_gradient or cfg.use_value_gradient),
    )
    report = experiment_service.run_evaluate(cfg, policy, spec=spec)
    _emit(report)


def _run_analytic(args: argparse.Namespace) -> None:
    kind = AnalyticKind(args.kind)
    params: Dict[str, float] = {"a": args.a, "h": args.h}
    if kind == AnalyticKind.ERGODIC_QUADRATIC:
        params.update(alpha=args.alpha, nominal=args.nominal)
    else:
        params.update(b=args.b, c=args.c)
    if kind == AnalyticKind.DISCOUNTED_LINEAR:
        if args.r is None:
            raise ConfigurationError("discounted-linear 需要 --r")
        params["r"] = args.r
    _emit(experiment_service.run_analytic(kind, params, list(args.grid)))


def _run_benchmark_search(args: argparse.Namespace) -> None:
    cfg = _load_config(args)
    spec = experiment_service.build_problem(cfg)
    if args.family is not None:
        family = PolicyKind(args.family)
    elif spec.cost.kind == CostKind.LINEAR:
        family = PolicyKind.LINEAR_BOUNDARY
    else:
        family = PolicyKind.AFFINE_RATE
    grid: Optional[GridSpec] = None
    if args.axis is not None:
        n_axes = 1 if spec.dimension == 1 else 5
        grid = GridSpec(axes=[list(args.axis)] * n_axes, refine=not args.no_refine)
    elif args.no_refine:
        grid = experiment_service.policies.default_grid(spec, refine=False)
    _emit(experiment_service.run_benchmark_search(cfg, family, grid))


def _run_simulate(args: argparse.Namespace) -> None:
    cfg = _load_config(args)
    batch, path = experiment_service.run_simulate(cfg, args.paths)
    _emit({"paths_csv": path, "batch_size": batch.batch_size, "n_steps": batch.n_steps})


def _run_reproduce(args: argparse.Namespace) -> None:
    cfg = _load_config(args)
    frame = experiment_service.reproduce(args.table, cfg, scale=args.scale)
    print(frame.to_string(index=False))


COMMANDS: Dict[str, Callable[[argparse.Namespace], None]] = {
    "train": _run_train,
    "evaluate": _run_evaluate,
    "analytic": _run_analytic,
    "benchmark-search": _run_benchmark_search,
    "simulate": _run_simulate,
    "reproduce": _run_reproduce,
}


def main(argv: Optional[List[str]] = None) -> int:
    """执行子命令并返回退出码"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    try:
        setup_logging(args.log_level)
        COMMANDS[args.command](args)
        return EXIT_OK
    except (ConfigurationError, ValidationError) as e:
        logger.error(f"配置错误: {str(e)}")
        print(f"配置错误: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        logger.error(f"数值计算失败: {str(e)}")
        print(f"数值计算失败: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (RBMSolverError, OSError) as e:
        logger.error(f"执行失败: {str(e)}")
        print(f"执行失败: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())

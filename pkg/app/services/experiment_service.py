"""
实验服务
把实验配置串联成训练、评估、基准搜索、路径模拟与结果表格复现流水线，
并管理接口提交的后台训练任务
"""

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from app.core.config import settings
from app.core.exceptions import ConfigurationError, RBMSolverError
from app.core.profiles import get_profile, profile_for
from app.schemas.analytic_schemas import AnalyticKind
from app.schemas.common_schemas import TaskStatus, TrainingTask
from app.schemas.experiment_schemas import ExperimentConfig
from app.schemas.policy_schemas import (
    EvalReport,
    EvalSettings,
    GridSpec,
    Policy,
    PolicyKind,
    SymmetricPhi,
)
from app.schemas.problem_schemas import CostKind, Objective, ObjectiveKind, ProblemSpec
from app.schemas.rbm_schemas import PathBatch
from app.schemas.training_schemas import TrainConfig, TrainProgress, TrainResult
from app.services.analytic_service import analytic_service
from app.services.file_storage_service import config_hash, file_storage_service
from app.services.neural_network_service import neural_network_service
from app.services.policy_service import expand_symmetric, policy_service
from app.services.problem_service import problem_service
from app.services.rbm_simulation_service import rbm_simulation_service
from app.services.solver_service import solver_service

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ["table", "b", "objective", "policy", "mean", "stderr", "n_paths", "seed"]
EVALUATION_COLUMNS = ["policy", "mode", "mean", "stderr", "n_paths", "seed"]
PROGRESS_COLUMNS = ["iteration", "loss", "lr", "decay", "elapsed"]

# 阈值表的参数组合 (b, h, r)，a = c = 1
THRESHOLD_GRID = [(b, h, r) for b in (2.0, 10.0) for h in (2.0, 1.9) for r in (0.01, 0.1)]


class TableLayout(BaseModel):
    """复现表格的一组单元格：每个 (b, 目标) 训练一次并与基准策略比较"""

    preset: str = Field(..., description="预设问题")
    k: int = Field(..., description="预设参数 K")
    b_values: List[float] = Field(..., description="动作上界取值")
    objectives: List[ObjectiveKind] = Field(
        default_factory=lambda: [ObjectiveKind.DISCOUNTED, ObjectiveKind.ERGODIC],
        description="目标类型",
    )
    benchmark: str = Field(..., description="analytic / search / heuristic")


TABLES: Dict[str, TableLayout] = {
    "table1": TableLayout(preset="ff-linear", k=0, b_values=[2.0, 10.0], benchmark="analytic"),
    "table2": TableLayout(preset="ff-linear", k=1, b_values=[2.0, 10.0], benchmark="search"),
    "table3": TableLayout(preset="ff-quadratic", k=0, b_values=[10.0], benchmark="analytic"),
    "table4": TableLayout(preset="ff-linear", k=20, b_values=[2.0, 10.0], benchmark="search"),
    "table5": TableLayout(preset="ff-asymmetric", k=5, b_values=[2.0, 10.0], benchmark="heuristic"),
    "table6": TableLayout(preset="parallel-linear", k=30, b_values=[2.0, 10.0], benchmark="analytic"),
}
TABLE_NAMES = (*TABLES, "table9")


def _scaled(value: int, scale: float, minimum: int = 1) -> int:
    return max(minimum, int(round(value * scale)))


class ExperimentService:
    """实验流水线服务"""

    def __init__(self):
        self.problems = problem_service
        self.solver = solver_service
        self.policies = policy_service
        self.analytic = analytic_service
        self.simulator = rbm_simulation_service
        self.storage = file_storage_service
        self.nn = neural_network_service
        self._tasks: Dict[str, TrainingTask] = {}
        self._lock = threading.Lock()
        self._executor = ThreadPoolExecutor(max_workers=settings.max_concurrent_tasks)

    # ------------------------------------------------------------------ 配置转换

    @staticmethod
    def objective_of(cfg: ExperimentConfig) -> Objective:
        if cfg.objective == ObjectiveKind.ERGODIC:
            return Objective.ergodic()
        return Objective.discounted(cfg.discount_rate)

    def build_problem(self, cfg: ExperimentConfig) -> ProblemSpec:
        return self.problems.build_preset(
            cfg.preset, cfg.k, self.objective_of(cfg), cfg.b, cfg.problem_file
        )

    def train_config(
        self, cfg: ExperimentConfig, spec: ProblemSpec, scale: float = 1.0
    ) -> TrainConfig:
        """
        合成训练配置：显式配置值优先，其余取超参数预设

        scale < 1 时按比例缩短迭代次数与学习率分段
        """
        if cfg.profile is not None:
            profile = get_profile(cfg.profile)
        else:
            upper = float(spec.actions.upper.max())
            profile = profile_for(spec.cost.kind, spec.dimension, upper)
        iterations = cfg.iterations or _scaled(profile.iterations, scale)
        lr = profile.lr_schedule.scaled(iterations / profile.iterations)
        decay_c0 = cfg.decay_c0 if cfg.decay_c0 is not None else profile.decay_c0
        decay_c1 = cfg.decay_c1 if cfg.decay_c1 is not None else profile.decay_c1
        if decay_c1 is not None and cfg.decay_c1 is None:
            decay_c1 = decay_c1 * iterations / profile.iterations
        logger.info(
            f"训练配置: profile={profile.name}, M={iterations}, decay=({decay_c0}, {decay_c1})"
        )
        try:
            return TrainConfig(
                iterations=iterations,
                batch_size=cfg.batch_size or profile.batch_size,
                horizon=cfg.horizon,
                step=cfg.step,
                lr=lr,
                loss_variant=cfg.loss_variant,
                decay_c0=decay_c0 if decay_c1 is not None else None,
                decay_c1=decay_c1,
                seed=cfg.seed,
                value_hidden=cfg.hidden_layers("value") or list(profile.hidden),
                gradient_hidden=cfg.hidden_layers("gradient") or list(profile.hidden),
                checkpoint_every=cfg.checkpoint_every,
                log_every=cfg.log_every,
                workers=cfg.workers,
            )
        except ValueError as e:
            raise ConfigurationError(f"训练配置无效: {str(e)}")

    @staticmethod
    def eval_settings(cfg: ExperimentConfig, scale: float = 1.0) -> EvalSettings:
        return EvalSettings(
            n_paths=_scaled(cfg.eval_paths, scale, minimum=2),
            horizon=cfg.eval_horizon,
            burn_in=cfg.eval_burn_in,
            step=cfg.eval_step if cfg.eval_step is not None else cfg.step,
            seed=cfg.seed,
            workers=cfg.workers,
        )

    @staticmethod
    def _output_dir(cfg: ExperimentConfig, output_dir: Optional[Path]) -> Path:
        path = Path(output_dir or cfg.output_dir)
        path.mkdir(parents=True, exist_ok=True)
        return path

    # ------------------------------------------------------------------ 训练

    def run_train(
        self,
        cfg: ExperimentConfig,
        output_dir: Optional[Path] = None,
        progress: Optional[Callable[[TrainProgress], None]] = None,
        scale: float = 1.0,
    ) -> Tuple[TrainResult, Dict[str, Any]]:
        """
        训练并写出 loss_trace.csv、progress.csv（含用时）、checkpoints/ 与 summary.json

        Returns:
            (训练结果, 摘要)
        """
        out = self._output_dir(cfg, output_dir)
        spec = self.build_problem(cfg)
        train_cfg = self.train_config(cfg, spec, scale)
        records: List[Dict[str, float]] = []
        digest = config_hash(cfg.fingerprint())

        try:
            stream = self.storage.csv_stream(out / "progress.csv", PROGRESS_COLUMNS, digest)
            with stream as append:

                def track(record: TrainProgress) -> None:
                    row = record.model_dump()
                    records.append(row)
                    append(row)
                    if progress is not None:
                        progress(record)

                result = self.solver.train(spec, train_cfg, track, out / "checkpoints")
        except RBMSolverError as e:
            logger.error(f"训练失败: {str(e)}")
            raise

        # 用时只进入 progress.csv，loss_trace.csv 对相同配置逐字节相同
        trace = pd.DataFrame(records, columns=PROGRESS_COLUMNS).drop(columns="elapsed")
        self.storage.write_csv(out / "loss_trace.csv", trace, digest)
        summary: Dict[str, Any] = {
            "problem": spec.name,
            "dimension": spec.dimension,
            "objective": spec.objective.kind.value,
            "loss_variant": result.loss_variant.value,
            "iterations": train_cfg.iterations,
            "xi_hat": result.xi_hat,
            "value_at_zero": result.value_at_zero,
            "final_loss": result.loss_trace[-1],
            "wall_time": result.wall_time,
            "config_hash": digest,
            "seed": cfg.seed,
        }
        if spec.dimension == 1 and spec.cost.kind == CostKind.LINEAR:
            summary["threshold"] = self.solver.learned_threshold(result, spec)
        self.storage.write_json(out / "summary.json", summary)
        return result, summary

    # ------------------------------------------------------------------ 策略与评估

    def build_policy(
        self,
        spec: ProblemSpec,
        kind: PolicyKind,
        theta: Optional[Sequence[float]] = None,
        betas: Optional[Sequence[Sequence[float]]] = None,
        phi: Optional[Sequence[float]] = None,
        checkpoint: Optional[str] = None,
        use_value_gradient: bool = False,
    ) -> Policy:
        """按类型与参数构造待评估的策略"""
        kind = PolicyKind(kind)
        if kind == PolicyKind.CONSTANT:
            if theta is None:
                raise ConfigurationError("常数策略需要 theta")
            return self.policies.constant_policy(spec, theta)
        if kind == PolicyKind.ANALYTIC:
            return self.policies.analytic_policy(spec)
        if kind == PolicyKind.LEARNED:
            if not checkpoint:
                raise ConfigurationError("learned 策略需要检查点文件")
            networks, _, _ = self.nn.load_checkpoint(Path(checkpoint))
            if "value" not in networks or "gradient" not in networks:
                raise ConfigurationError(f"检查点缺少 value/gradient 网络: {checkpoint}")
            return self.solver.policy_from_networks(
                networks["value"], networks["gradient"], spec, use_value_gradient
            )
        if betas is not None:
            matrix = np.asarray(betas, dtype=float)
        elif phi is not None:
            values = list(phi)
            if spec.dimension == 1:
                matrix = np.array([[values[0]]])
            else:
                matrix = expand_symmetric(SymmetricPhi.from_values(values), spec.dimension - 1)
        else:
            raise ConfigurationError(f"{kind.value} 策略需要 betas 或 phi")
        return self.policies.family_policy(spec, kind, matrix)

    def run_evaluate(
        self,
        cfg: ExperimentConfig,
        policy: Policy,
        output_dir: Optional[Path] = None,
        spec: Optional[ProblemSpec] = None,
    ) -> EvalReport:
        """评估策略并写出 evaluation.csv 与 evaluation.json"""
        out = self._output_dir(cfg, output_dir)
        spec = spec or self.build_problem(cfg)
        report = self.policies.evaluate_policy(spec, policy, self.eval_settings(cfg))
        digest = config_hash({"config": cfg.fingerprint(), "policy": policy.parameters})
        row = {
            "policy": policy.kind.value,
            "mode": report.mode.value,
            "mean": report.mean,
            "stderr": report.stderr,
            "n_paths": report.n_paths,
            "seed": cfg.seed,
        }
        self.storage.write_csv(
            out / "evaluation.csv", pd.DataFrame([row], columns=EVALUATION_COLUMNS), digest
        )
        self.storage.write_json(out / "evaluation.json", {"report": report, "config_hash": digest})
        return report

    def run_benchmark_search(
        self,
        cfg: ExperimentConfig,
        family: PolicyKind,
        grid: Optional[GridSpec] = None,
        output_dir: Optional[Path] = None,
    ) -> Dict[str, Any]:
        """
        基准策略网格搜索，写出 grid_search.csv 与 benchmark.json

        ff-asymmetric 预设使用子网络启发式
        """
        out = self._output_dir(cfg, output_dir)
        spec = self.build_problem(cfg)
        settings_ = self.eval_settings(cfg)
        digest = config_hash({"config": cfg.fingerprint(), "family": family.value})
        if spec.routing is not None and cfg.preset == "ff-asymmetric":
            policy, report = self.policies.heuristic_asymmetric(spec, settings_)
            summary = {"family": "heuristic", "parameters": policy.parameters, "report": report}
        else:
            grid = grid or self.policies.default_grid(spec)
            best, report, table = self.policies.grid_search(spec, family, grid, settings_)
            self.storage.write_csv(out / "grid_search.csv", table, digest)
            summary = {"family": family.value, "best": best, "report": report}
        summary["config_hash"] = digest
        self.storage.write_json(out / "benchmark.json", summary)
        return summary

    # ------------------------------------------------------------------ 模拟

    def run_simulate(
        self,
        cfg: ExperimentConfig,
        batch_size: int,
        output_dir: Optional[Path] = None,
    ) -> Tuple[PathBatch, Path]:
        """在参考策略下模拟路径并写出 paths.csv"""
        out = self._output_dir(cfg, output_dir)
        spec = self.build_problem(cfg)
        starts = np.zeros((batch_size, spec.dimension))
        batch = self.simulator.simulate_reference_paths(
            spec.reflection,
            spec.covariance,
            spec.reference_drift,
            starts,
            cfg.horizon,
            cfg.step,
            seed=cfg.seed,
            workers=cfg.workers,
        )
        digest = config_hash({"config": cfg.fingerprint(), "batch_size": batch_size})
        path = self.storage.write_csv(out / "paths.csv", self.paths_frame(batch), digest)
        return batch, path

    @staticmethod
    def paths_frame(batch: PathBatch) -> pd.DataFrame:
        """长表：path, step, time, z_k（状态）, y_k（累计调节量）"""
        B, n_plus_one, d = batch.states.shape
        cumulative = np.concatenate(
            [np.zeros((B, 1, d)), np.cumsum(batch.pushes, axis=1)], axis=1
        )
        steps = np.arange(n_plus_one)
        frame = pd.DataFrame(
            {
                "path": np.repeat(np.arange(B), n_plus_one),
                "step": np.tile(steps, B),
                "time": np.tile(steps * batch.step, B),
            }
        )
        for k in range(d):
            frame[f"z_{k}"] = batch.states[:, :, k].reshape(-1)
        for k in range(d):
            frame[f"y_{k}"] = cumulative[:, :, k].reshape(-1)
        return frame

    # ------------------------------------------------------------------ 解析解

    def run_analytic(
        self, kind: AnalyticKind, params: Dict[str, float], grid: Sequence[float] = ()
    ) -> Dict[str, Any]:
        """解析解摘要，可附带网格上的导数与策略"""
        solution = self.analytic.solve(kind, **params)
        summary = solution.summary()
        if len(grid):
            z = np.asarray(grid, dtype=float)
            summary["grid"] = {
                "z": z.tolist(),
                "derivative": np.asarray(solution.derivative(z)).tolist(),
                "policy": np.asarray(solution.policy(z)).tolist(),
            }
        return summary

    def threshold_table(self) -> pd.DataFrame:
        """a = c = 1 时折现线性问题的阈值 z*"""
        rows = []
        for b, h, r in THRESHOLD_GRID:
            solution = self.analytic.discounted_linear_1d(1.0, b, 1.0, h, r)
            rows.append({"b": b, "h": h, "r": r, "z_star": solution.z_star})
        return pd.DataFrame(rows, columns=["b", "h", "r", "z_star"])

    # ------------------------------------------------------------------ 表格复现

    def reproduce(
        self,
        table: str,
        cfg: ExperimentConfig,
        scale: float = 1.0,
        output_dir: Optional[Path] = None,
    ) -> pd.DataFrame:
        """
        复现结果表格：每个 (b, 目标) 训练并评估学习到的策略与基准策略

        Args:
            table: table1..table6 或 table9
            cfg: 基础实验配置（种子、评估设置、线程数）
            scale: 迭代次数与评估路径数的缩放系数
            output_dir: 输出目录

        Returns:
            与写出的 CSV 相同的表
        """
        out = self._output_dir(cfg, output_dir)
        if table == "table9":
            frame = self.threshold_table()
            self.storage.write_csv(out / "table9.csv", frame, config_hash({"table": table}))
            return frame
        if table not in TABLES:
            raise ConfigurationError(f"不支持的表格: {table}（可选 {', '.join(TABLE_NAMES)}）")
        if scale <= 0:
            raise ConfigurationError(f"缩放系数必须为正: {scale}")

        layout = TABLES[table]
        rows = []
        for b in layout.b_values:
            for objective in layout.objectives:
                cell_cfg = cfg.model_copy(
                    update={"preset": layout.preset, "k": layout.k, "b": b, "objective": objective}
                )
                cell_dir = out / f"{table}_b{b:g}_{objective.value}"
                logger.info(f"复现 {table}: b={b}, objective={objective.value}")
                spec = self.build_problem(cell_cfg)
                settings_ = self.eval_settings(cell_cfg, scale)

                result, _ = self.run_train(cell_cfg, cell_dir, scale=scale)
                learned = self.solver.extract_policy(result, spec, cell_cfg.use_value_gradient)
                ours = self.policies.evaluate_policy(spec, learned, settings_)
                benchmark_name, benchmark = self._benchmark(layout, spec, settings_)
                for name, report in (("ours", ours), (benchmark_name, benchmark)):
                    rows.append(
                        {
                            "table": table,
                            "b": b,
                            "objective": objective.value,
                            "policy": name,
                            "mean": report.mean,
                            "stderr": report.stderr,
                            "n_paths": report.n_paths,
                            "seed": cell_cfg.seed,
                        }
                    )

        frame = pd.DataFrame(rows, columns=TABLE_COLUMNS)
        digest = config_hash({"table": table, "scale": scale, "config": cfg.fingerprint()})
        self.storage.write_csv(out / f"{table}.csv", frame, digest)
        return frame

    def _benchmark(
        self, layout: TableLayout, spec: ProblemSpec, settings_: EvalSettings
    ) -> Tuple[str, EvalReport]:
        if layout.benchmark == "heuristic":
            _, report = self.policies.heuristic_asymmetric(spec, settings_)
            return "heuristic", report
        if layout.benchmark == "analytic":
            try:
                policy = self.policies.analytic_policy(spec)
                return "analytic", self.policies.evaluate_policy(spec, policy, settings_)
            except ConfigurationError as e:
                logger.warning(f"解析基准不可用，改用网格搜索: {str(e)}")
        family = (
            PolicyKind.LINEAR_BOUNDARY
            if spec.cost.kind == CostKind.LINEAR
            else PolicyKind.AFFINE_RATE
        )
        grid = self.policies.default_grid(spec)
        if spec.dimension > 1:
            scale = grid.axes[0][-1] / 3.0
            grid = GridSpec(axes=[[0.5 * i * scale for i in range(4)]] * 5, refine=False)
        _, report, _ = self.policies.grid_search(spec, family, grid, settings_)
        return family.value, report

    # ------------------------------------------------------------------ 后台任务

    def submit_training(self, cfg: ExperimentConfig) -> TrainingTask:
        """提交后台训练任务，同时运行的任务数受 max_concurrent_tasks 限制"""
        task_id = self.storage.generate_task_id()
        spec = self.build_problem(cfg)
        total = self.train_config(cfg, spec).iterations
        task = TrainingTask(task_id=task_id, total_iterations=total)
        with self._lock:
            self._tasks[task_id] = task
        self._executor.submit(self._run_task, task_id, cfg)
        logger.info(f"训练任务已提交: {task_id}")
        return task

    def shutdown(self) -> None:
        """停止接收新任务；正在运行的训练线程跑完当前任务后退出"""
        self._executor.shutdown(wait=False, cancel_futures=True)
        logger.info("后台训练线程池已关闭")

    def get_task(self, task_id: str) -> Optional[TrainingTask]:
        with self._lock:
            task = self._tasks.get(task_id)
            return task.model_copy() if task is not None else None

    def _update_task(self, task_id: str, **changes: Any) -> None:
        with self._lock:
            task = self._tasks[task_id]
            self._tasks[task_id] = task.model_copy(update={**changes, "updated_at": datetime.now()})

    def _run_task(self, task_id: str, cfg: ExperimentConfig) -> None:
        self._update_task(task_id, status=TaskStatus.RUNNING)

        def progress(record: TrainProgress) -> None:
            self._update_task(task_id, iteration=record.iteration + 1, last_loss=record.loss)

        try:
            out = self.storage.task_dir(task_id)
            _, summary = self.run_train(cfg, out, progress)
            urls = {
                name: self.storage.download_url(task_id, name)
                for name in ("summary.json", "loss_trace.csv", "progress.csv")
            }
            urls["checkpoint_final.json"] = self.storage.download_url(
                task_id, "checkpoints/checkpoint_final.json"
            )
            self._update_task(
                task_id, status=TaskStatus.COMPLETED, summary=summary, download_urls=urls
            )
            logger.info(f"训练任务完成: {task_id}")
        except Exception as e:
            logger.error(f"训练任务失败: {task_id}: {str(e)}")
            self._update_task(task_id, status=TaskStatus.FAILED, error_message=str(e))


# 创建全局实例
experiment_service = ExperimentService()

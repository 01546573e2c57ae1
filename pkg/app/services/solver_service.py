"""
求解器服务
经验损失的计算与反向传播、带路径延续的训练循环、学习策略的提取
"""

import logging
import time
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.core.config import settings
from app.core.exceptions import ConfigurationError, DivergenceError, RBMSolverError
from app.schemas.network_schemas import NetworkGradients, NetworkParams
from app.schemas.policy_schemas import Policy, PolicyKind
from app.schemas.problem_schemas import CostKind, ObjectiveKind, ProblemSpec
from app.schemas.rbm_schemas import PathBatch
from app.schemas.training_schemas import (
    LossVariant,
    TrainConfig,
    TrainProgress,
    TrainResult,
)
from app.services.neural_network_service import neural_network_service
from app.services.problem_service import problem_service
from app.services.rbm_simulation_service import rbm_simulation_service

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[TrainProgress], None]

# 网络初始化使用的随机流键，长度与路径流 (iteration, path) 不同
_VALUE_INIT_KEY = (0,)
_GRADIENT_INIT_KEY = (1,)


class LossEvaluation(BaseModel):
    """一次损失计算的结果"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    loss: float = Field(..., description="损失值")
    brackets: np.ndarray = Field(..., description="逐路径括号表达式 X_i")
    value_gradients: Optional[NetworkGradients] = Field(None, description="价值网络梯度")
    gradient_gradients: Optional[NetworkGradients] = Field(None, description="梯度网络梯度")
    offset_gradient: float = Field(0.0, description="偏移 ξ 的梯度")


def default_loss_variant(spec: ProblemSpec) -> LossVariant:
    """遍历目标用方差损失；折现目标 r ≤ 0.01 用方差损失，否则用普通平方损失"""
    if spec.objective.kind == ObjectiveKind.ERGODIC:
        return LossVariant.ERGODIC_VARIANCE
    if spec.objective.rate <= 0.01:
        return LossVariant.VARIANCE_DISCOUNTED
    return LossVariant.PLAIN_DISCOUNTED


class SolverService:
    """神经网络求解器"""

    def __init__(self):
        self.nn = neural_network_service
        self.problems = problem_service
        self.simulator = rbm_simulation_service

    # ------------------------------------------------------------------ 损失

    def discounted_loss(
        self,
        batch: PathBatch,
        value_network: NetworkParams,
        gradient_network: NetworkParams,
        spec: ProblemSpec,
        decay: float = 0.0,
        offset: float = 0.0,
        rate: Optional[float] = None,
        with_gradients: bool = True,
    ) -> LossEvaluation:
        """
        折现问题的平方损失 mean(X²)

        X = e^{-rT}V(Z_N) - V(Z_0) + Σ_j e^{-rhj}[κ·ΔY_j - G(Z_j)·δ_j + F(Z_j, G(Z_j)) h]，
        V = 网络输出 + offset。

        Args:
            batch: 参考策略下的路径批次
            value_network: 价值网络
            gradient_network: 梯度网络
            spec: 问题
            decay: F 函数的衰减系数 b̃
            offset: 价值函数的常数偏移 ξ
            rate: 覆盖问题的折现率
            with_gradients: 是否计算参数梯度

        Returns:
            LossEvaluation
        """
        return self._evaluate(
            batch,
            value_network,
            gradient_network,
            spec,
            decay,
            LossVariant.PLAIN_DISCOUNTED,
            spec.objective.rate if rate is None else rate,
            offset,
            with_gradients,
        )

    def discounted_variance_loss(
        self,
        batch: PathBatch,
        value_network: NetworkParams,
        gradient_network: NetworkParams,
        spec: ProblemSpec,
        decay: float = 0.0,
        rate: Optional[float] = None,
        with_gradients: bool = True,
    ) -> LossEvaluation:
        """折现问题的方差损失 Var(X̃)（总体方差，偏移 ξ 被消去）"""
        return self._evaluate(
            batch,
            value_network,
            gradient_network,
            spec,
            decay,
            LossVariant.VARIANCE_DISCOUNTED,
            spec.objective.rate if rate is None else rate,
            0.0,
            with_gradients,
        )

    def ergodic_loss(
        self,
        batch: PathBatch,
        value_network: NetworkParams,
        gradient_network: NetworkParams,
        spec: ProblemSpec,
        decay: float = 0.0,
        with_gradients: bool = True,
    ) -> LossEvaluation:
        """遍历问题的方差损失 Var(v(Z_N) - v(Z_0) - Σ g·δ + Σ κ·ΔY + Σ F h)"""
        return self._evaluate(
            batch,
            value_network,
            gradient_network,
            spec,
            decay,
            LossVariant.ERGODIC_VARIANCE,
            0.0,
            0.0,
            with_gradients,
        )

    def evaluate_loss(
        self,
        variant: LossVariant,
        batch: PathBatch,
        value_network: NetworkParams,
        gradient_network: NetworkParams,
        spec: ProblemSpec,
        decay: float = 0.0,
        offset: float = 0.0,
        with_gradients: bool = True,
    ) -> LossEvaluation:
        if variant == LossVariant.PLAIN_DISCOUNTED:
            return self.discounted_loss(
                batch, value_network, gradient_network, spec, decay, offset,
                with_gradients=with_gradients,
            )
        if variant == LossVariant.VARIANCE_DISCOUNTED:
            return self.discounted_variance_loss(
                batch, value_network, gradient_network, spec, decay,
                with_gradients=with_gradients,
            )
        return self.ergodic_loss(
            batch, value_network, gradient_network, spec, decay,
            with_gradients=with_gradients,
        )

    def _evaluate(
        self,
        batch: PathBatch,
        value_network: NetworkParams,
        gradient_network: NetworkParams,
        spec: ProblemSpec,
        decay: float,
        variant: LossVariant,
        rate: float,
        offset: float,
        with_gradients: bool,
    ) -> LossEvaluation:
        n_paths, n_steps, d = batch.increments.shape
        if variant != LossVariant.PLAIN_DISCOUNTED and n_paths < 2:
            raise ConfigurationError(f"方差损失需要至少2条路径，实际 {n_paths}")
        h = batch.step
        discount = np.exp(-rate * h * np.arange(n_steps))
        discount_end = float(np.exp(-rate * h * n_steps))

        endpoints = np.concatenate([batch.states[:, 0], batch.states[:, -1]])
        values, value_cache = self.nn.forward(value_network, endpoints)
        v_start, v_end = values[:n_paths, 0], values[n_paths:, 0]

        visited = batch.states[:, :-1].reshape(n_paths * n_steps, d)
        g, gradient_cache = self.nn.forward(gradient_network, visited)
        f, df_dx = self.problems.f_function_with_gradient(spec, visited, g, decay)
        g = g.reshape(n_paths, n_steps, d)

        step_terms = (
            batch.pushes @ spec.pushing_cost
            - np.sum(g * batch.increments, axis=-1)
            + f.reshape(n_paths, n_steps) * h
        )
        brackets = discount_end * v_end - v_start + step_terms @ discount

        if variant == LossVariant.PLAIN_DISCOUNTED:
            brackets = brackets + (discount_end - 1.0) * offset
            residual = brackets
        else:
            residual = brackets - brackets.mean()
        loss = float(np.mean(residual**2))

        if not with_gradients:
            return LossEvaluation(loss=loss, brackets=brackets)

        d_bracket = 2.0 * residual / n_paths
        value_upstream = np.concatenate([-d_bracket, discount_end * d_bracket])[:, None]
        value_grads = self.nn.backward(value_network, value_cache, value_upstream)

        sensitivity = -batch.increments + h * df_dx.reshape(n_paths, n_steps, d)
        gradient_upstream = (
            d_bracket[:, None, None] * discount[None, :, None] * sensitivity
        ).reshape(n_paths * n_steps, d)
        gradient_grads = self.nn.backward(gradient_network, gradient_cache, gradient_upstream)

        offset_grad = 0.0
        if variant == LossVariant.PLAIN_DISCOUNTED:
            offset_grad = float((discount_end - 1.0) * d_bracket.sum())

        return LossEvaluation(
            loss=loss,
            brackets=brackets,
            value_gradients=value_grads,
            gradient_gradients=gradient_grads,
            offset_gradient=offset_grad,
        )

    # ------------------------------------------------------------------ 训练

    def train(
        self,
        spec: ProblemSpec,
        config: TrainConfig,
        progress: Optional[ProgressCallback] = None,
        checkpoint_dir: Optional[Path] = None,
    ) -> TrainResult:
        """
        训练价值网络与梯度网络

        每次迭代：从当前起点模拟一批路径，计算损失与梯度，Adam 更新，
        然后以路径终点作为下一次迭代的起点。

        Args:
            spec: 问题
            config: 训练配置
            progress: 进度回调（每次迭代调用）
            checkpoint_dir: 检查点目录，为空时不保存

        Returns:
            TrainResult
        """
        d = spec.dimension
        variant = config.loss_variant or default_loss_variant(spec)
        self._check_variant(spec, variant)
        logger.info(
            f"开始训练: problem={spec.name}, d={d}, M={config.iterations}, "
            f"B={config.batch_size}, N={config.n_steps}, loss={variant.value}"
        )

        value_net = self.nn.init_network(
            [d, *config.value_hidden, 1], self._init_rng(config.seed, _VALUE_INIT_KEY)
        )
        gradient_net = self.nn.init_network(
            [d, *config.gradient_hidden, d],
            self._init_rng(config.seed, _GRADIENT_INIT_KEY),
        )
        offset = 0.0
        trainable_offset = variant == LossVariant.PLAIN_DISCOUNTED
        arrays = self._pack(value_net, gradient_net, offset, trainable_offset)
        adam = self.nn.init_adam(arrays)

        start_point = np.zeros(d) if config.start_state is None else np.asarray(config.start_state, dtype=float)
        if start_point.shape != (d,) or np.any(start_point < 0):
            raise ConfigurationError(f"训练起点必须是 {d} 维非负向量")
        starts = np.tile(start_point, (config.batch_size, 1))

        loss_trace: List[float] = []
        began = time.perf_counter()
        try:
            for k in range(config.iterations):
                decay = self.problems.decay_coefficient(k, config.decay_c0, config.decay_c1)
                lr = config.lr.rate_at(k)
                batch = self.simulator.simulate_reference_paths(
                    spec.reflection,
                    spec.covariance,
                    spec.reference_drift,
                    starts,
                    config.horizon,
                    config.step,
                    seed=config.seed,
                    iteration=k,
                    workers=config.workers,
                )
                evaluation = self.evaluate_loss(
                    variant, batch, value_net, gradient_net, spec, decay, offset
                )
                self._guard(evaluation, k)

                grads = self._pack_gradients(evaluation, trainable_offset)
                arrays, adam = self.nn.adam_step(arrays, adam, grads, lr)
                value_net, gradient_net, offset = self._unpack(
                    arrays, value_net, gradient_net, trainable_offset
                )
                starts = batch.final_states.copy()

                loss_trace.append(evaluation.loss)
                record = TrainProgress(
                    iteration=k,
                    loss=evaluation.loss,
                    lr=lr,
                    decay=decay,
                    elapsed=time.perf_counter() - began,
                )
                if progress is not None:
                    progress(record)
                if k % config.log_every == 0 or k == config.iterations - 1:
                    logger.info(
                        f"迭代 {k}: loss={evaluation.loss:.6g}, lr={lr:g}, b̃={decay:.4g}"
                    )
                if (
                    checkpoint_dir is not None
                    and config.checkpoint_every
                    and (k + 1) % config.checkpoint_every == 0
                ):
                    self.nn.save_checkpoint(
                        Path(checkpoint_dir) / f"checkpoint_{k + 1:06d}.json",
                        {"value": value_net, "gradient": gradient_net},
                        offset,
                        {"iteration": k + 1, "loss_variant": variant.value},
                    )
        except RBMSolverError as e:
            logger.error(f"训练失败: {str(e)}")
            raise

        xi_hat, value_at_zero = self._estimate_offset(
            spec, config, variant, value_net, gradient_net, offset, starts
        )
        wall_time = time.perf_counter() - began
        logger.info(f"训练完成: ξ̂={xi_hat:.6g}, 用时 {wall_time:.1f}s")

        result = TrainResult(
            value_network=value_net,
            gradient_network=gradient_net,
            offset=offset,
            xi_hat=xi_hat,
            value_at_zero=value_at_zero,
            loss_variant=variant,
            loss_trace=loss_trace,
            final_states=starts,
            wall_time=wall_time,
        )
        if checkpoint_dir is not None:
            self.nn.save_checkpoint(
                Path(checkpoint_dir) / "checkpoint_final.json",
                {"value": value_net, "gradient": gradient_net},
                offset,
                {
                    "iteration": config.iterations,
                    "loss_variant": variant.value,
                    "xi_hat": xi_hat,
                },
            )
        return result

    def _estimate_offset(
        self,
        spec: ProblemSpec,
        config: TrainConfig,
        variant: LossVariant,
        value_net: NetworkParams,
        gradient_net: NetworkParams,
        offset: float,
        starts: np.ndarray,
    ) -> Tuple[float, Optional[float]]:
        """在 10·B 条新路径上估计 ξ̂，以及折现情形的 V(0)"""
        v_zero = float(self.nn.predict(value_net, np.zeros((1, spec.dimension)))[0, 0])
        if variant == LossVariant.PLAIN_DISCOUNTED:
            return offset, v_zero + offset

        fresh_starts = np.tile(starts, (config.eval_batch_multiplier, 1))
        batch = self.simulator.simulate_reference_paths(
            spec.reflection,
            spec.covariance,
            spec.reference_drift,
            fresh_starts,
            config.horizon,
            config.step,
            seed=config.seed,
            iteration=config.iterations,
            workers=config.workers,
        )
        evaluation = self.evaluate_loss(
            variant, batch, value_net, gradient_net, spec, 0.0, with_gradients=False
        )
        mean_bracket = float(evaluation.brackets.mean())
        if variant == LossVariant.ERGODIC_VARIANCE:
            return mean_bracket / config.horizon, None
        xi_hat = mean_bracket / (1.0 - np.exp(-spec.objective.rate * config.horizon))
        return float(xi_hat), v_zero + float(xi_hat)

    @staticmethod
    def _check_variant(spec: ProblemSpec, variant: LossVariant) -> None:
        ergodic = spec.objective.kind == ObjectiveKind.ERGODIC
        if ergodic != (variant == LossVariant.ERGODIC_VARIANCE):
            raise ConfigurationError(
                f"损失类型 {variant.value} 与目标 {spec.objective.kind.value} 不匹配"
            )

    @staticmethod
    def _guard(evaluation: LossEvaluation, iteration: int) -> None:
        loss = evaluation.loss
        if not np.isfinite(loss) or loss > settings.divergence_threshold:
            raise DivergenceError(
                f"训练在第 {iteration} 次迭代发散: loss={loss}", iteration=iteration
            )

    @staticmethod
    def _init_rng(seed: int, key: Tuple[int, ...]) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))

    @staticmethod
    def _pack(
        value_net: NetworkParams,
        gradient_net: NetworkParams,
        offset: float,
        trainable_offset: bool,
    ) -> List[np.ndarray]:
        arrays = value_net.flat() + gradient_net.flat()
        if trainable_offset:
            arrays.append(np.array(offset))
        return arrays

    @staticmethod
    def _pack_gradients(
        evaluation: LossEvaluation, trainable_offset: bool
    ) -> List[np.ndarray]:
        grads = evaluation.value_gradients.flat() + evaluation.gradient_gradients.flat()
        if trainable_offset:
            grads.append(np.array(evaluation.offset_gradient))
        return grads

    def _unpack(
        self,
        arrays: List[np.ndarray],
        value_net: NetworkParams,
        gradient_net: NetworkParams,
        trainable_offset: bool,
    ) -> Tuple[NetworkParams, NetworkParams, float]:
        n_value = 2 * len(value_net.weights)
        n_gradient = 2 * len(gradient_net.weights)
        new_value = self.nn.with_parameters(value_net, arrays[:n_value])
        new_gradient = self.nn.with_parameters(
            gradient_net, arrays[n_value : n_value + n_gradient]
        )
        offset = float(arrays[-1]) if trainable_offset else 0.0
        return new_value, new_gradient, offset

    # ------------------------------------------------------------------ 策略

    def extract_policy(
        self, result: TrainResult, spec: ProblemSpec, use_value_gradient: bool = False
    ) -> Policy:
        """
        由训练结果得到策略 θ(z) = argmax_θ {θ·G(z) - c(z, θ)}

        Args:
            result: 训练结果
            spec: 问题
            use_value_gradient: 以 ∇V 代替 G（通常较差）

        Returns:
            Policy
        """
        return self.policy_from_networks(
            result.value_network, result.gradient_network, spec, use_value_gradient
        )

    def policy_from_networks(
        self,
        value_net: NetworkParams,
        gradient_net: NetworkParams,
        spec: ProblemSpec,
        use_value_gradient: bool = False,
    ) -> Policy:
        """由网络参数（例如读回的检查点）构造策略"""
        if gradient_net.input_dim != spec.dimension:
            raise ConfigurationError(
                f"网络输入维度 {gradient_net.input_dim} 与问题维度 {spec.dimension} 不一致"
            )
        if use_value_gradient:

            def evaluator(z: np.ndarray) -> np.ndarray:
                return self.problems.argmax_policy(spec, z, self.nn.input_gradient(value_net, z))

            description = "argmax with ∇V"
        else:

            def evaluator(z: np.ndarray) -> np.ndarray:
                return self.problems.argmax_policy(spec, z, self.nn.predict(gradient_net, z))

            description = "argmax with G"
        return Policy.from_function(
            PolicyKind.LEARNED,
            evaluator,
            description=description,
            parameters={"use_value_gradient": use_value_gradient},
        )

    def learned_threshold(
        self,
        result: TrainResult,
        spec: ProblemSpec,
        z_max: float = 5.0,
        n_points: int = 5001,
    ) -> Optional[float]:
        """一维线性成本问题：网格上满足 G(z) ≥ c 的最小 z，不存在时返回 None"""
        if spec.dimension != 1 or spec.cost.kind != CostKind.LINEAR:
            raise ConfigurationError("阈值提取仅适用于一维线性成本问题")
        grid = np.linspace(0.0, z_max, n_points)[:, None]
        g = self.nn.predict(result.gradient_network, grid)[:, 0]
        hits = np.flatnonzero(g >= spec.cost.control[0])
        return float(grid[hits[0], 0]) if hits.size else None


# 创建全局实例
solver_service = SolverService()

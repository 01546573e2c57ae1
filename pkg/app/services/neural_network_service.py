"""
神经网络服务
全连接 elu 网络的前向/反向传播、Adam 更新与检查点读写
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import ConfigurationError, StaleCacheError
from app.schemas.network_schemas import (
    CHECKPOINT_FORMAT,
    AdamState,
    ForwardCache,
    NetworkGradients,
    NetworkParams,
)

logger = logging.getLogger(__name__)


def elu(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_derivative(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, 1.0, np.exp(np.minimum(x, 0.0)))


class NeuralNetworkService:
    """全连接网络服务"""

    def init_network(
        self, layer_dims: Sequence[int], rng: np.random.Generator
    ) -> NetworkParams:
        """
        初始化网络参数

        权重取 ±√(6/(fan_in+fan_out)) 上的均匀分布，偏置为0。

        Args:
            layer_dims: 各层宽度
            rng: 随机数生成器

        Returns:
            NetworkParams
        """
        dims = [int(n) for n in layer_dims]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return NetworkParams(layer_dims=dims, weights=weights, biases=biases)

    def forward(
        self, params: NetworkParams, inputs: np.ndarray
    ) -> Tuple[np.ndarray, ForwardCache]:
        """
        前向传播

        Args:
            params: 网络参数
            inputs: 输入，形状 (B, d)

        Returns:
            (输出 (B, out), 前向缓存)
        """
        x = np.asarray(inputs, dtype=float)
        if x.ndim != 2 or x.shape[1] != params.input_dim:
            raise ConfigurationError(
                f"网络输入形状应为 (B, {params.input_dim})，实际 {x.shape}"
            )
        layer_inputs, pre_activations = [], []
        n_layers = len(params.weights)
        for i, (w, b) in enumerate(zip(params.weights, params.biases)):
            layer_inputs.append(x)
            pre = x @ w + b
            pre_activations.append(pre)
            x = elu(pre) if i < n_layers - 1 else pre
        cache = ForwardCache(
            inputs=layer_inputs, pre_activations=pre_activations, version=params.version
        )
        return x, cache

    def predict(self, params: NetworkParams, inputs: np.ndarray) -> np.ndarray:
        return self.forward(params, inputs)[0]

    def backward(
        self, params: NetworkParams, cache: ForwardCache, upstream: np.ndarray
    ) -> NetworkGradients:
        """
        反向传播，返回参数梯度与输入梯度

        Args:
            params: 网络参数（须与生成缓存时一致）
            cache: forward 返回的缓存
            upstream: 损失关于输出的梯度，形状 (B, out)

        Returns:
            NetworkGradients
        """
        if cache.version != params.version:
            raise StaleCacheError(
                f"前向缓存版本 {cache.version} 与参数版本 {params.version} 不一致"
            )
        delta = np.asarray(upstream, dtype=float)
        expected = cache.pre_activations[-1].shape
        if delta.shape != expected:
            raise ConfigurationError(f"上游梯度形状应为 {expected}，实际 {delta.shape}")

        n_layers = len(params.weights)
        grad_w: List[np.ndarray] = [np.empty(0)] * n_layers
        grad_b: List[np.ndarray] = [np.empty(0)] * n_layers
        for i in reversed(range(n_layers)):
            grad_w[i] = cache.inputs[i].T @ delta
            grad_b[i] = delta.sum(axis=0)
            delta = delta @ params.weights[i].T
            if i > 0:
                delta = delta * elu_derivative(cache.pre_activations[i - 1])
        return NetworkGradients(weights=grad_w, biases=grad_b, inputs=delta)

    def input_gradient(self, params: NetworkParams, inputs: np.ndarray) -> np.ndarray:
        """标量输出网络关于输入的梯度 ∇f(z)，形状 (B, d)"""
        if params.output_dim != 1:
            raise ConfigurationError("输入梯度仅适用于标量输出网络")
        out, cache = self.forward(params, inputs)
        return self.backward(params, cache, np.ones_like(out)).inputs

    def with_parameters(
        self, params: NetworkParams, flat: Sequence[np.ndarray]
    ) -> NetworkParams:
        """用 [W0, b0, W1, b1, ...] 构造新版本的网络参数"""
        return NetworkParams(
            layer_dims=params.layer_dims,
            weights=[np.asarray(a) for a in flat[0::2]],
            biases=[np.asarray(a) for a in flat[1::2]],
            activation=params.activation,
            version=params.version + 1,
        )

    # ------------------------------------------------------------------ Adam

    def init_adam(
        self,
        arrays: Sequence[np.ndarray],
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> AdamState:
        return AdamState(
            first_moments=[np.zeros_like(a, dtype=float) for a in arrays],
            second_moments=[np.zeros_like(a, dtype=float) for a in arrays],
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )

    def adam_step(
        self,
        arrays: Sequence[np.ndarray],
        state: AdamState,
        grads: Sequence[np.ndarray],
        lr: float,
    ) -> Tuple[List[np.ndarray], AdamState]:
        """
        带偏差修正的 Adam 更新

        Args:
            arrays: 参数数组列表
            state: Adam 状态
            grads: 与参数一一对应的梯度
            lr: 学习率

        Returns:
            (更新后的参数, 新状态)
        """
        if len(arrays) != len(grads) or len(arrays) != len(state.first_moments):
            raise ConfigurationError("Adam 参数、梯度与状态数量不一致")
        step = state.step + 1
        b1, b2 = state.beta1, state.beta2
        correction1 = 1.0 - b1**step
        correction2 = 1.0 - b2**step
        updated, first, second = [], [], []
        for p, g, m, v in zip(arrays, grads, state.first_moments, state.second_moments):
            g = np.asarray(g, dtype=float)
            if g.shape != np.shape(p):
                raise ConfigurationError(f"梯度形状 {g.shape} 与参数 {np.shape(p)} 不一致")
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            m_hat = m / correction1
            v_hat = v / correction2
            updated.append(p - lr * m_hat / (np.sqrt(v_hat) + state.epsilon))
            first.append(np.asarray(m))
            second.append(np.asarray(v))
        new_state = AdamState(
            first_moments=first,
            second_moments=second,
            step=step,
            beta1=b1,
            beta2=b2,
            epsilon=state.epsilon,
        )
        return updated, new_state

    # ------------------------------------------------------------------ 检查点

    @staticmethod
    def network_to_dict(params: NetworkParams) -> Dict[str, Any]:
        return {
            "layer_dims": list(params.layer_dims),
            "activation": params.activation,
            "weights": [w.ravel(order="C").tolist() for w in params.weights],
            "biases": [b.tolist() for b in params.biases],
        }

    @staticmethod
    def network_from_dict(raw: Dict[str, Any]) -> NetworkParams:
        try:
            dims = [int(n) for n in raw["layer_dims"]]
            weights = [
                np.asarray(w, dtype=float).reshape(dims[i], dims[i + 1])
                for i, w in enumerate(raw["weights"])
            ]
            biases = [np.asarray(b, dtype=float) for b in raw["biases"]]
            return NetworkParams(
                layer_dims=dims,
                weights=weights,
                biases=biases,
                activation=raw.get("activation", "elu"),
            )
        except (KeyError, ValueError, TypeError) as e:
            raise ConfigurationError(f"网络检查点格式错误: {str(e)}")

    def save_checkpoint(
        self,
        path: Path,
        networks: Dict[str, NetworkParams],
        offset: float = 0.0,
        metadata: Optional[Dict[str, Any]] = None,
    ) -> Path:
        """
        保存 JSON 检查点

        浮点数以最短往返表示写出，读回后逐位一致。
        """
        try:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            payload = {
                "format": CHECKPOINT_FORMAT,
                "networks": {k: self.network_to_dict(v) for k, v in networks.items()},
                "offset": float(offset),
                "metadata": metadata or {},
            }
            path.write_text(json.dumps(payload), encoding="utf-8")
            logger.debug(f"检查点已保存: {path}")
            return path
        except OSError as e:
            logger.error(f"保存检查点失败: {str(e)}")
            raise

    def load_checkpoint(
        self, path: Path
    ) -> Tuple[Dict[str, NetworkParams], float, Dict[str, Any]]:
        """读取检查点，返回 (网络字典, 偏移 ξ, 元数据)"""
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"检查点不是合法 JSON: {path}: {str(e)}")
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise ConfigurationError(f"不支持的检查点格式: {payload.get('format')}")
        networks = {
            name: self.network_from_dict(raw) for name, raw in payload["networks"].items()
        }
        return networks, float(payload.get("offset", 0.0)), payload.get("metadata", {})


# 创建全局实例
neural_network_service = NeuralNetworkService()

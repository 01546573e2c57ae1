"""
文件存储服务
管理任务目录、结果文件（CSV / JSON）与下载URL
"""

import hashlib
import json
import logging
import uuid
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from app.core.config import settings

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def config_hash(payload: Any) -> str:
    """规范化 JSON（键排序）的 sha256 摘要"""
    canonical = json.dumps(clean_data_for_json(payload), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def clean_data_for_json(data: Any) -> Any:
    """
    将 numpy 数组、numpy 标量与 pydantic 模型转换为可 JSON 序列化的结构

    Args:
        data: 需要清理的数据

    Returns:
        清理后的数据
    """
    if isinstance(data, BaseModel):
        return clean_data_for_json(data.model_dump(mode="json"))
    if isinstance(data, np.ndarray):
        return data.tolist()
    if isinstance(data, np.generic):
        return data.item()
    if isinstance(data, Path):
        return str(data)
    if isinstance(data, dict):
        return {str(key): clean_data_for_json(value) for key, value in data.items()}
    if isinstance(data, (list, tuple)):
        return [clean_data_for_json(item) for item in data]
    return data


class FileStorageService:
    """文件存储服务"""

    def __init__(self, base_path: Optional[PathLike] = None):
        self.base_storage_path = Path(base_path or settings.storage_path)
        self.base_download_url = settings.download_base_url
        self.results_path = self.base_storage_path / "results"

    def generate_task_id(self) -> str:
        """生成任务ID"""
        return str(uuid.uuid4())

    def task_dir(self, task_id: str) -> Path:
        """任务结果目录，不存在时创建"""
        path = self.results_path / task_id
        path.mkdir(parents=True, exist_ok=True)
        return path

    def download_url(self, task_id: str, filename: str) -> str:
        return f"{self.base_download_url}/{task_id}/{filename}"

    def get_result_file(self, task_id: str, filename: str) -> Optional[Path]:
        """查找任务结果文件，路径越界或不存在时返回 None"""
        root = self.results_path.resolve()
        candidate = (self.results_path / task_id / filename).resolve()
        if root not in candidate.parents or not candidate.is_file():
            return None
        return candidate

    def write_csv(
        self, path: PathLike, frame: pd.DataFrame, hash_value: Optional[str] = None
    ) -> Path:
        """
        写入 CSV：可选的 `# config_hash=...` 注释行，然后是表头与数据

        浮点数以 repr 精度输出，相同输入得到逐字节相同的文件。
        """
        try:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8", newline="") as f:
                if hash_value is not None:
                    f.write(f"# config_hash={hash_value}\n")
                frame.to_csv(f, index=False, float_format="%.17g", lineterminator="\n")
            logger.info(f"CSV 已保存: {path} ({len(frame)} 行)")
            return path
        except OSError as e:
            logger.error(f"保存CSV失败: {str(e)}")
            raise

    @contextmanager
    def csv_stream(
        self, path: PathLike, columns: List[str], hash_value: Optional[str] = None
    ) -> Iterator[Callable[[Dict[str, Any]], None]]:
        """
        逐行追加的 CSV，格式与 write_csv 相同；每行写入后立即刷新，训练中途即可查看

        Yields:
            append(row) 函数，row 为列名到取值的字典
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            if hash_value is not None:
                f.write(f"# config_hash={hash_value}\n")
            f.write(",".join(columns) + "\n")

            def append(row: Dict[str, Any]) -> None:
                line = pd.DataFrame([row], columns=columns)
                line.to_csv(
                    f, header=False, index=False, float_format="%.17g", lineterminator="\n"
                )
                f.flush()

            yield append
        logger.info(f"CSV 流已关闭: {path}")

    @staticmethod
    def read_csv(path: PathLike) -> pd.DataFrame:
        return pd.read_csv(path, comment="#")

    @staticmethod
    def read_config_hash(path: PathLike) -> Optional[str]:
        with open(path, encoding="utf-8") as f:
            first = f.readline().strip()
        prefix = "# config_hash="
        return first[len(prefix):] if first.startswith(prefix) else None

    def write_json(self, path: PathLike, payload: Any) -> Path:
        """写入 JSON（键排序、缩进2）"""
        try:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8") as f:
                json.dump(clean_data_for_json(payload), f, ensure_ascii=False, indent=2, sort_keys=True)
                f.write("\n")
            logger.info(f"JSON 已保存: {path}")
            return path
        except OSError as e:
            logger.error(f"保存JSON失败: {str(e)}")
            raise

    def save_task_result(self, task_id: str, filename: str, payload: Dict[str, Any]) -> str:
        """保存任务 JSON 结果并返回下载URL"""
        self.write_json(self.task_dir(task_id) / filename, payload)
        url = self.download_url(task_id, filename)
        logger.info(f"任务结果已保存: task_id={task_id}, 下载URL: {url}")
        return url


# 创建全局实例
file_storage_service = FileStorageService()

# 结果文件下载API

import logging

from fastapi import APIRouter, HTTPException
from fastapi.responses import FileResponse

from app.services.file_storage_service import file_storage_service

router = APIRouter()
logger = logging.getLogger(__name__)

MEDIA_TYPES = {
    ".json": "application/json",
    ".csv": "text/csv",
}


@router.get("/{task_id}/{filename:path}")
async def download_file_by_task_id(task_id: str, filename: str):
    """
    通过任务ID下载结果文件

    **参数说明:**
    - **task_id** (str): 任务ID，例如: `"d9520111-0eb6-4426-9baf-c37afc6fc501"`
    - **filename** (str): 任务目录内的相对路径，例如 `"paths.csv"`、
      `"summary.json"`、`"checkpoints/checkpoint_final.json"`

    **使用示例:**
    ```bash
    curl -X GET "http://localhost:8000/api/v1/download/d9520111-0eb6-4426-9baf-c37afc6fc501/loss_trace.csv"
    ```

    **错误码:**
    - `404`: 文件未找到、任务ID不存在或路径越出任务目录
    - `500`: 服务器内部错误
    """
    try:
        logger.info(f"开始下载文件: task_id={task_id}, filename={filename}")
        file_path = file_storage_service.get_result_file(task_id, filename)
        if file_path is None:
            logger.warning(f"文件未找到: task_id={task_id}, filename={filename}")
            raise HTTPException(
                status_code=404, detail=f"文件未找到: {filename} (任务ID: {task_id})"
            )
        media_type = MEDIA_TYPES.get(file_path.suffix, "application/octet-stream")
        return FileResponse(path=str(file_path), filename=file_path.name, media_type=media_type)
    except HTTPException:
        raise
    except Exception as e:
        logger.error(f"下载文件时出错: task_id={task_id}, filename={filename}, error={str(e)}")
        raise HTTPException(status_code=500, detail=f"下载文件时出错: {str(e)}")

# 求解器各领域服务（模拟、问题、网络、训练、解析解、策略、实验）

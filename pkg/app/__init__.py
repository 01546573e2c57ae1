# 反射布朗运动漂移控制求解器

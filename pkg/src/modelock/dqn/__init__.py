"""Deep Q-network agent with hand-written gradients."""
from modelock.dqn.agent import (Adam, DivergenceError, EpisodeLog, EvalEpisode, FinetuneConfig,
                                TrainConfig, TrainResult, batch_targets, ddqn_target, evaluate,
                                grow_controllers, select_action, soft_update, spec_for_env,
                                tabular_q_update, train, transfer_finetune, value_iteration)
from modelock.dqn.chain import ChainMDP
from modelock.dqn.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from modelock.dqn.network import NetSpec, QNetwork, backward, forward, loss_and_grad
from modelock.dqn.replay import ReplayBuffer, Transition, replay_push, replay_sample

__all__ = [
    "Adam", "ChainMDP", "CheckpointError", "DivergenceError", "EpisodeLog", "EvalEpisode",
    "FinetuneConfig", "NetSpec", "QNetwork", "ReplayBuffer", "TrainConfig", "TrainResult",
    "Transition", "backward", "batch_targets", "ddqn_target", "evaluate", "forward",
    "grow_controllers", "load_checkpoint", "loss_and_grad", "replay_push", "replay_sample",
    "save_checkpoint", "select_action", "soft_update", "spec_for_env", "tabular_q_update",
    "train", "transfer_finetune", "value_iteration",
]

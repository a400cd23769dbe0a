from .losses import ProbField, composite_seg_loss, cross_entropy, one_hot, soft_dice_loss

__all__ = ["ProbField", "composite_seg_loss", "cross_entropy", "one_hot", "soft_dice_loss"]

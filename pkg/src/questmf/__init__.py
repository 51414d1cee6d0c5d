"""Question-wise multimodal fusion for PHQ-8 severity prediction."""

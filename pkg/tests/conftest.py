import torch

# Tiny tensors thrash under heavy intra-op parallelism; two threads is the
# measured sweet spot for this workload.
torch.set_num_threads(2)

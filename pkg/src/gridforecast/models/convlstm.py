import torch
import torch.nn.functional as F
from torch import nn


class ConvLSTMCell(nn.Module):
    """Single ConvLSTM cell; all four gates come from one convolution over [x, h]."""

    def __init__(self, input_channels, hidden_channels, kernel_size=(11, 11), bias=True):
        super().__init__()
        if isinstance(kernel_size, int):
            kernel_size = (kernel_size, kernel_size)
        kh, kw = kernel_size
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("ConvLSTM kernel sides must be odd to keep the grid size")
        self.input_channels = input_channels
        self.hidden_channels = hidden_channels
        self.kernel_size = (kh, kw)
        self.padding = (kh // 2, kw // 2)
        self.gates = nn.Conv2d(input_channels + hidden_channels, 4 * hidden_channels,
                               (kh, kw), padding=self.padding, bias=bias)

    def init_state(self, x):
        b, _, h, w = x.shape
        zeros = x.new_zeros(b, self.hidden_channels, h, w)
        return zeros, zeros.clone()

    def input_gates(self, x):
        """Input share of the gate pre-activations (includes the bias).

        Lets a caller feeding the same input at every step pay for it once.
        """
        w = self.gates.weight[:, :self.input_channels]
        return F.conv2d(x, w, self.gates.bias, padding=self.padding)

    def step(self, x_gates, state):
        h, c = state
        w = self.gates.weight[:, self.input_channels:]
        pre = x_gates + F.conv2d(h, w, None, padding=self.padding)
        i, f, o, g = torch.split(pre, self.hidden_channels, dim=1)
        c_next = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h_next = torch.sigmoid(o) * torch.tanh(c_next)
        return h_next, c_next

    def forward(self, x, state=None):
        h, c = self.init_state(x) if state is None else state
        i, f, o, g = torch.split(self.gates(torch.cat([x, h], dim=1)), self.hidden_channels, dim=1)
        c_next = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h_next = torch.sigmoid(o) * torch.tanh(c_next)
        return h_next, c_next

"""
Frame-window datasets for stage training.

Utterances are stacked into one matrix; a training example is the window of
`context` consecutive rows around one labelled frame, gathered by fancy
indexing so no window is ever materialized ahead of time.
"""

import numpy as np

from core.exceptions import NoDataError


class WindowDataset:
    """
    Labelled fixed-length windows over a list of utterance matrices.

    Two layouts are supported:

    * edge padding (`left`, `right` > 0): every frame is labelled and its
      window is frames t - left .. t + right with the utterance edges
      repeated; used by the phone and AER networks.
    * valid windows (`left` = `right` = 0, `context` > 1): one example per
      full window, labelled with the label of its first frame; used by the
      CT-DNN whose labels are constant per utterance.

    Attributes:
        data (np.ndarray): [sum of padded lengths x d] stacked rows.
        starts (np.ndarray): First data row of every example window.
        labels (np.ndarray): Integer label of every example.
        context (int): Window length in frames.
        channel (bool): Insert a channel axis, giving [N, 1, context, d].

    Example:
        ds = WindowDataset([x1, x2], [y1, y2], context=9, left=4, right=4)
        inputs, labels = ds.batch(np.arange(32))
    """

    def __init__(self, sequences, labels, context, left=0, right=0, channel=False):
        if left + right not in (0, context - 1):
            raise ValueError(f"padding {left}+{right} does not fit a context of {context}")
        blocks, starts, targets = [], [], []
        base = 0
        for frames, frame_labels in zip(sequences, labels):
            frames = np.asarray(frames, dtype=np.float64)
            frame_labels = np.asarray(frame_labels, dtype=np.int64)
            if left or right:
                padded = np.pad(frames, ((left, right), (0, 0)), mode="edge")
                n_examples = frames.shape[0]
            else:
                padded = frames
                n_examples = frames.shape[0] - context + 1
            if n_examples <= 0:
                continue
            blocks.append(padded)
            starts.append(base + np.arange(n_examples))
            targets.append(frame_labels[:n_examples])
            base += padded.shape[0]
        if not blocks:
            raise NoDataError("no data: no utterance is long enough for a training window")
        self.data = np.concatenate(blocks)
        self.starts = np.concatenate(starts)
        self.labels = np.concatenate(targets)
        self.context = context
        self.channel = channel

    def __len__(self):
        return int(self.starts.shape[0])

    @property
    def n_classes_seen(self):
        return int(np.unique(self.labels).shape[0])

    def batch(self, indices):
        """
        Returns:
            tuple: (inputs [B, context, d] or [B, 1, context, d], labels [B])
        """
        rows = self.starts[indices][:, None] + np.arange(self.context)
        inputs = self.data[rows]
        if self.channel:
            inputs = inputs[:, None]
        return inputs, self.labels[indices]

"""Naive, loop-based reference implementations used only by the tests."""
import math


def naive_weights(S, beta, tau, direction="row"):
    B = len(S)
    w = [[1.0] * B for _ in range(B)]
    if B == 1:
        return w
    for i in range(B):
        if direction == "row":
            denom = sum(math.exp(beta * S[i][k] / tau) for k in range(B) if k != i)
            for j in range(B):
                if j != i:
                    w[i][j] = (B - 1) * math.exp(beta * S[i][j] / tau) / denom
        else:
            denom = sum(math.exp(beta * S[k][i] / tau) for k in range(B) if k != i)
            for j in range(B):
                if j != i:
                    w[j][i] = (B - 1) * math.exp(beta * S[j][i] / tau) / denom
    return w


def naive_loss(S, tau=0.07, lam=1.0, beta=0.5):
    """Both sums of the symmetric hard-negative contrastive loss, unstabilized."""
    B = len(S)
    wr = naive_weights(S, beta, tau, "row")
    wc = naive_weights(S, beta, tau, "column")
    total = 0.0
    for i in range(B):
        pos = math.exp(S[i][i] / tau)
        neg_r = sum(math.exp(S[i][j] / tau) * wr[i][j] for j in range(B) if j != i)
        neg_c = sum(math.exp(S[j][i] / tau) * wc[j][i] for j in range(B) if j != i)
        total -= math.log(pos / (lam * pos + neg_r))
        total -= math.log(pos / (lam * pos + neg_c))
    return total


def ranking_key(score, key):
    return (-score, key)

class MulCounter:
    """
    Tally of real multiplications.

    Detectors call ``add`` next to each vectorised product with the number of
    scalar multiplications it performs, so the count follows the code path
    actually executed.
    """
    def __init__(self):
        self.total = 0

    def add(self, n):
        self.total += int(n)
        return self.total

    def snapshot(self):
        return self.total

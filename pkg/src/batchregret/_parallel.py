from concurrent.futures import ProcessPoolExecutor


def ordered_map(fn, items, workers=1):
    """map() that optionally fans out to processes; output order follows input order."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))

"""
Small asyncio helpers for running blocking calibration work concurrently.
"""
import asyncio
import functools


async def gather_dict(dic):
    cors = list(dic.values())
    results = await asyncio.gather(*cors)
    return dict(zip(dic.keys(), results))


async def run_blocking(func, *args, **kwargs):
    """Run a CPU bound call in the default executor."""
    loop = asyncio.get_running_loop()
    return await loop.run_in_executor(None, functools.partial(func, *args, **kwargs))


async def capture(awaitable, *exceptions):
    """Await and return the result, or the exception if it is one of ``exceptions``."""
    try:
        return await awaitable
    except exceptions as e:
        return e

"""External service clients.

Each module in this package wraps one outside data source behind a plain
function returning domain records; network failures surface as
``app.utils.NetworkError`` subclasses.
"""

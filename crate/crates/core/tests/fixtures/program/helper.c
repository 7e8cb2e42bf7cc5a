int classify(long v)
{
    if (v < 0)
        return 1;
    return 0;
}
